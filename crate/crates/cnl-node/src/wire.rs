//! Framed wire protocol: 4-byte big-endian payload length, then one UTF-8
//! JSON object `{"v":1,"type":...,"task_id":...,"sender":...,"payload":{}}`.
//! Ciphertext components travel as lowercase hex strings; sealed control
//! payloads as base64 under `"sealed"`.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{NodeError, NodeResult};

pub const WIRE_VERSION: u32 = 1;
/// Upper bound on a single frame; embeddings at desk scale stay far under.
pub const MAX_FRAME_BYTES: u32 = 64 * 1024 * 1024;

/// Message types of the node service protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageType {
    #[serde(rename = "HELLO")]
    Hello,
    #[serde(rename = "TASK_ANNOUNCE")]
    TaskAnnounce,
    #[serde(rename = "PUBKEY_SHARE")]
    PubkeyShare,
    #[serde(rename = "HE_ROLE_NOTIFY")]
    HeRoleNotify,
    #[serde(rename = "EMB_SUBMIT")]
    EmbSubmit,
    #[serde(rename = "SUM_BROADCAST")]
    SumBroadcast,
    #[serde(rename = "STATUS_QUERY")]
    StatusQuery,
    #[serde(rename = "STATUS_REPLY")]
    StatusReply,
    #[serde(rename = "RESULT_FETCH")]
    ResultFetch,
    #[serde(rename = "ERROR")]
    Error,
}

/// One framed message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Message {
    pub v: u32,
    #[serde(rename = "type")]
    pub msg_type: MessageType,
    /// Every message carries a task id except HELLO.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    pub sender: String,
    pub payload: Value,
}

impl Message {
    pub fn new(
        msg_type: MessageType,
        task_id: Option<&str>,
        sender: &str,
        payload: Value,
    ) -> Self {
        Message {
            v: WIRE_VERSION,
            msg_type,
            task_id: task_id.map(str::to_owned),
            sender: sender.to_owned(),
            payload,
        }
    }

    pub fn error(sender: &str, task_id: Option<&str>, code: &str, detail: &str) -> Self {
        Message::new(
            MessageType::Error,
            task_id,
            sender,
            serde_json::json!({ "code": code, "message": detail }),
        )
    }

    pub fn encode(&self) -> NodeResult<Vec<u8>> {
        let body = serde_json::to_vec(self)?;
        if body.len() as u64 > MAX_FRAME_BYTES as u64 {
            return Err(NodeError::Wire("frame exceeds size limit".into()));
        }
        let mut out = Vec::with_capacity(4 + body.len());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn decode(body: &[u8]) -> NodeResult<Self> {
        let msg: Message = serde_json::from_slice(body)?;
        if msg.v != WIRE_VERSION {
            return Err(NodeError::Wire(format!("unsupported version {}", msg.v)));
        }
        if msg.task_id.is_none() && msg.msg_type != MessageType::Hello {
            return Err(NodeError::Wire(format!(
                "{:?} requires a task id",
                msg.msg_type
            )));
        }
        Ok(msg)
    }
}

/// Writes one frame to the stream.
pub fn write_frame(stream: &mut TcpStream, msg: &Message) -> NodeResult<()> {
    let bytes = msg.encode()?;
    stream.write_all(&bytes)?;
    stream.flush()?;
    Ok(())
}

/// Reads one frame; respects the stream's read timeout.
pub fn read_frame(stream: &mut TcpStream) -> NodeResult<Message> {
    let mut len_buf = [0u8; 4];
    stream.read_exact(&mut len_buf)?;
    let len = u32::from_be_bytes(len_buf);
    if len > MAX_FRAME_BYTES {
        return Err(NodeError::Wire(format!("oversized frame: {} bytes", len)));
    }
    let mut body = vec![0u8; len as usize];
    stream.read_exact(&mut body)?;
    Message::decode(&body)
}

/// One request/reply exchange against `addr`.
pub fn call(addr: &str, msg: &Message, timeout: Duration) -> NodeResult<Message> {
    let sock_addr: std::net::SocketAddr = addr
        .parse()
        .map_err(|e| NodeError::Config(format!("bad address {:?}: {}", addr, e)))?;
    let mut stream = TcpStream::connect_timeout(&sock_addr, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    write_frame(&mut stream, msg)?;
    read_frame(&mut stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_roundtrip() {
        let msg = Message::new(
            MessageType::StatusQuery,
            Some("task-1"),
            "node-a",
            serde_json::json!({"sealed": "AAAA"}),
        );
        let bytes = msg.encode().unwrap();
        assert_eq!(&bytes[..4], &(bytes.len() as u32 - 4).to_be_bytes());
        let decoded = Message::decode(&bytes[4..]).unwrap();
        assert_eq!(decoded.msg_type, MessageType::StatusQuery);
        assert_eq!(decoded.task_id.as_deref(), Some("task-1"));
        assert_eq!(decoded.sender, "node-a");
    }

    #[test]
    fn hello_is_the_only_taskless_type() {
        let hello = Message::new(MessageType::Hello, None, "n", serde_json::json!({}));
        let bytes = hello.encode().unwrap();
        assert!(Message::decode(&bytes[4..]).is_ok());

        let bad = Message::new(MessageType::EmbSubmit, None, "n", serde_json::json!({}));
        let bytes = bad.encode().unwrap();
        assert!(Message::decode(&bytes[4..]).is_err());
    }

    #[test]
    fn type_names_serialize_as_wire_constants() {
        let msg = Message::new(
            MessageType::SumBroadcast,
            Some("t"),
            "n",
            serde_json::json!({}),
        );
        let text = serde_json::to_string(&msg).unwrap();
        assert!(text.contains("\"SUM_BROADCAST\""));
        assert!(text.contains("\"v\":1"));
    }
}
