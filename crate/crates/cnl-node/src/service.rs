//! The node service: a perpetually-listening peer that answers framed
//! requests, registers tasks flooded through the mesh, plays sender /
//! HE-computing-agency / target roles in encrypted embedding exchange,
//! and exposes the client operations other peers are driven with.
//!
//! Threading: one accept loop per node, one thread per connection, task
//! state behind a mutex. Handlers never block on another node's
//! computation; every mutation is idempotent so retries are safe.

use std::collections::{HashMap, HashSet};
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use cnl_core::crypto::{
    biguint_from_hex, biguint_to_hex, paillier_decrypt, paillier_encrypt, paillier_keygen,
    secure_sum, CiphertextVector, FixedPointCodec, PaillierKeypair, PaillierPublicKey,
    DEFAULT_MAX_ADDENDS,
};
use cnl_core::DenseMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rsa::RsaPublicKey;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{env_he_count, PeerConfig};
use crate::error::{NodeError, NodeResult};
use crate::seal::{control_open, control_seal, public_key_from_json, IdentityPublicJson};
use crate::task::TaskConfig;
use crate::wire::{call, Message, MessageType};

/// Per-task lifecycle, forward-only within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Announced,
    EmbeddingComputing,
    Submitted,
    Aggregating,
    Broadcast,
    Done,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Announced => "announced",
            Phase::EmbeddingComputing => "embedding_computing",
            Phase::Submitted => "submitted",
            Phase::Aggregating => "aggregating",
            Phase::Broadcast => "broadcast",
            Phase::Done => "done",
        }
    }
}

/// Ciphertext vector as it travels in a clear envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCiphertext {
    pub components: Vec<String>,
    pub scale_log2: u32,
    pub addend_count: usize,
}

impl WireCiphertext {
    pub fn from_core(v: &CiphertextVector) -> Self {
        WireCiphertext {
            components: v.components().iter().map(biguint_to_hex).collect(),
            scale_log2: v.scale_log2(),
            addend_count: v.addend_count(),
        }
    }

    pub fn to_core(&self) -> NodeResult<CiphertextVector> {
        let components = self
            .components
            .iter()
            .map(|h| biguint_from_hex(h))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CiphertextVector::new(
            components,
            self.scale_log2,
            self.addend_count.max(1),
        )?)
    }

    fn zero_marker(scale_log2: u32) -> Self {
        WireCiphertext {
            components: Vec::new(),
            scale_log2,
            addend_count: 0,
        }
    }
}

/// One HE agency's summed result for (target, round).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SumRecord {
    pub ciphertext: WireCiphertext,
    pub addend_count: usize,
    pub partial: bool,
    pub he_agency: String,
}

/// A published embedding: flattened row-major values plus shape.
#[derive(Debug, Clone)]
pub struct PublishedEmbedding {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl PublishedEmbedding {
    pub fn from_matrix(m: &DenseMatrix) -> Self {
        PublishedEmbedding {
            rows: m.rows(),
            cols: m.cols(),
            values: m.data().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeRole {
    target: String,
    round: usize,
    agencies: Vec<String>,
    expected_senders: usize,
}

#[derive(Default)]
struct TaskState {
    config: Option<TaskConfig>,
    phase: Phase,
    round: usize,
    /// Fresh Paillier keys generated when this node acts as target.
    my_keypair: Option<PaillierKeypair>,
    /// Paillier public keys received from targets, keyed by target id.
    target_keys: HashMap<String, PaillierPublicKey>,
    /// This node's embedding per round, set by the local pipeline.
    published: HashMap<usize, PublishedEmbedding>,
    /// Roles announced by targets: (target, round) -> role info.
    he_roles: HashMap<(String, usize), HeRole>,
    /// Submissions already made: (target, round).
    submitted: HashSet<(String, usize)>,
    /// Pending submissions awaiting a published embedding.
    pending_submits: Vec<(String, usize)>,
    /// As HE agency: received ciphertexts per (target, round), by sender.
    inbox: HashMap<(String, usize), HashMap<String, WireCiphertext>>,
    /// As HE agency: retained sums (raw inbox destroyed on aggregation).
    summed: HashMap<(String, usize), SumRecord>,
    /// As target: sums received per round, by HE agency.
    sums_received: HashMap<usize, HashMap<String, SumRecord>>,
}

impl Default for Phase {
    fn default() -> Self {
        Phase::Idle
    }
}

impl TaskState {
    fn advance(&mut self, round: usize, phase: Phase) {
        if round > self.round {
            self.round = round;
            self.phase = phase;
        } else if round == self.round && phase > self.phase {
            self.phase = phase;
        }
    }
}

/// Captured frame for instrumentation.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub outbound: bool,
    pub peer: String,
    pub json: String,
}

/// Callback invoked (on its own thread) when a new task registers.
pub type TaskRunner = Arc<dyn Fn(NodeHandle, TaskConfig) + Send + Sync>;

struct Shared {
    cfg: PeerConfig,
    running: AtomicBool,
    tasks: Mutex<HashMap<String, TaskState>>,
    peer_keys: Mutex<HashMap<String, RsaPublicKey>>,
    frames: Mutex<Vec<FrameRecord>>,
    announce_sent: AtomicUsize,
    runner: Mutex<Option<TaskRunner>>,
    weak_self: Mutex<Weak<Inner>>,
}

struct Inner {
    shared: Shared,
    accept: Mutex<Option<JoinHandle<()>>>,
}

/// Handle on a running node service.
#[derive(Clone)]
pub struct NodeHandle {
    inner: Arc<Inner>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic per (seed, node, round) RNG for role/destination picks.
fn pick_rng(seed: u64, node_id: &str, round: usize) -> rand_chacha::ChaCha20Rng {
    let mixed = seed ^ fnv1a(node_id.as_bytes()) ^ (round as u64).wrapping_mul(0x9e3779b97f4a7c15);
    rand_chacha::ChaCha20Rng::seed_from_u64(mixed)
}

impl NodeHandle {
    /// Binds the listen port and starts answering; fails when the port is
    /// taken or the config is malformed.
    pub fn start(cfg: PeerConfig) -> NodeResult<NodeHandle> {
        let listener = TcpListener::bind(&cfg.listen)
            .map_err(|e| NodeError::Config(format!("bind {}: {}", cfg.listen, e)))?;
        listener.set_nonblocking(true)?;
        let inner = Arc::new(Inner {
            shared: Shared {
                cfg,
                running: AtomicBool::new(true),
                tasks: Mutex::new(HashMap::new()),
                peer_keys: Mutex::new(HashMap::new()),
                frames: Mutex::new(Vec::new()),
                announce_sent: AtomicUsize::new(0),
                runner: Mutex::new(None),
                weak_self: Mutex::new(Weak::new()),
            },
            accept: Mutex::new(None),
        });
        *inner.shared.weak_self.lock().unwrap() = Arc::downgrade(&inner);
        let loop_inner = Arc::clone(&inner);
        let accept = std::thread::spawn(move || accept_loop(loop_inner, listener));
        *inner.accept.lock().unwrap() = Some(accept);
        Ok(NodeHandle { inner })
    }

    pub fn node_id(&self) -> &str {
        &self.inner.shared.cfg.node_id
    }

    pub fn listen_addr(&self) -> &str {
        &self.inner.shared.cfg.listen
    }

    pub fn neighbor_ids(&self) -> Vec<String> {
        self.inner
            .shared
            .cfg
            .neighbors
            .iter()
            .map(|n| n.id.clone())
            .collect()
    }

    pub fn set_task_runner(&self, runner: TaskRunner) {
        *self.inner.shared.runner.lock().unwrap() = Some(runner);
    }

    pub fn enable_frame_recording(&self) {
        // cfg.record_frames is read at capture time through this flag
        self.inner
            .shared
            .frames
            .lock()
            .unwrap()
            .reserve(1024);
        RECORD_ALL.store(true, Ordering::SeqCst);
    }

    pub fn recorded_frames(&self) -> Vec<FrameRecord> {
        self.inner.shared.frames.lock().unwrap().clone()
    }

    pub fn announce_transmissions(&self) -> usize {
        self.inner.shared.announce_sent.load(Ordering::SeqCst)
    }

    /// Stops the accept loop and joins it.
    pub fn shutdown(&self) {
        self.inner.shared.running.store(false, Ordering::SeqCst);
        if let Some(handle) = self.inner.accept.lock().unwrap().take() {
            let _ = handle.join();
        }
    }

    pub fn is_running(&self) -> bool {
        self.inner.shared.running.load(Ordering::SeqCst)
    }

    fn shared(&self) -> &Shared {
        &self.inner.shared
    }

    // ------------------------------------------------------------------
    // client operations
    // ------------------------------------------------------------------

    fn neighbor_addr(&self, peer_id: &str) -> NodeResult<String> {
        self.shared()
            .cfg
            .neighbors
            .iter()
            .find(|n| n.id == peer_id)
            .map(|n| n.addr.clone())
            .ok_or_else(|| NodeError::Protocol(format!("unknown neighbor {}", peer_id)))
    }

    /// HELLO a peer, caching its identity key; returns its node id.
    pub fn hello(&self, addr: &str) -> NodeResult<String> {
        let msg = Message::new(
            MessageType::Hello,
            None,
            self.node_id(),
            json!({
                "node_id": self.node_id(),
                "identity_pubkey": self.shared().cfg.identity.public_json(),
            }),
        );
        let reply = self.call_recorded(addr, &msg)?;
        if reply.msg_type != MessageType::Hello {
            return Err(NodeError::Protocol(format!(
                "unexpected HELLO reply: {:?}",
                reply.msg_type
            )));
        }
        let peer_id = reply.payload["node_id"]
            .as_str()
            .ok_or_else(|| NodeError::Protocol("HELLO reply missing node_id".into()))?
            .to_owned();
        let key_json: IdentityPublicJson =
            serde_json::from_value(reply.payload["identity_pubkey"].clone())?;
        let key = public_key_from_json(&key_json)?;
        self.shared()
            .peer_keys
            .lock()
            .unwrap()
            .insert(peer_id.clone(), key);
        Ok(peer_id)
    }

    fn ensure_peer_key(&self, peer_id: &str) -> NodeResult<RsaPublicKey> {
        if let Some(k) = self.shared().peer_keys.lock().unwrap().get(peer_id) {
            return Ok(k.clone());
        }
        let addr = self.neighbor_addr(peer_id)?;
        self.hello(&addr)?;
        self.shared()
            .peer_keys
            .lock()
            .unwrap()
            .get(peer_id)
            .cloned()
            .ok_or_else(|| NodeError::Protocol(format!("no identity key for {}", peer_id)))
    }

    fn call_recorded(&self, addr: &str, msg: &Message) -> NodeResult<Message> {
        record_frame(self.shared(), true, addr, msg);
        let reply = call(addr, msg, self.shared().cfg.timeout)?;
        record_frame(self.shared(), false, addr, &reply);
        Ok(reply)
    }

    fn sealed_to(&self, peer_id: &str, value: &Value) -> NodeResult<Value> {
        let key = self.ensure_peer_key(peer_id)?;
        let sealed = control_seal(&key, &serde_json::to_vec(value)?)?;
        Ok(json!({ "sealed": base64_encode(&sealed) }))
    }

    fn send_sealed(
        &self,
        peer_id: &str,
        msg_type: MessageType,
        task_id: &str,
        value: &Value,
    ) -> NodeResult<Message> {
        let addr = self.neighbor_addr(peer_id)?;
        let payload = self.sealed_to(peer_id, value)?;
        let msg = Message::new(msg_type, Some(task_id), self.node_id(), payload);
        if msg_type == MessageType::TaskAnnounce {
            self.shared().announce_sent.fetch_add(1, Ordering::SeqCst);
        }
        self.call_recorded(&addr, &msg)
    }

    fn send_sealed_with_retry(
        &self,
        peer_id: &str,
        msg_type: MessageType,
        task_id: &str,
        value: &Value,
        attempts: usize,
    ) -> NodeResult<Message> {
        let mut last = None;
        for _ in 0..attempts {
            match self.send_sealed(peer_id, msg_type, task_id, value) {
                Ok(m) => return Ok(m),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| NodeError::Protocol("no attempts made".into())))
    }

    /// Registers a task locally and floods it to all neighbors. Returns
    /// the ids of neighbors that could not be reached.
    pub fn announce_task(&self, task: &TaskConfig) -> NodeResult<Vec<String>> {
        task.validate(self.shared().cfg.neighbors.len().max(1))?;
        let newly = register_task(self.shared(), task);
        if !newly {
            return Ok(Vec::new());
        }
        let value = serde_json::to_value(task)?;
        let mut unreachable = Vec::new();
        for nb in self.shared().cfg.neighbors.clone() {
            if let Err(_e) =
                self.send_sealed(&nb.id, MessageType::TaskAnnounce, &task.task_id, &value)
            {
                unreachable.push(nb.id.clone());
            }
        }
        Ok(unreachable)
    }

    /// Generates this node's per-task Paillier keypair (if absent) and
    /// shares the public key with every neighbor (3 attempts each).
    pub fn share_public_key(&self, task_id: &str) -> NodeResult<Vec<String>> {
        let (n_hex, bits) = {
            let mut tasks = self.shared().tasks.lock().unwrap();
            let state = tasks
                .get_mut(task_id)
                .ok_or_else(|| NodeError::Protocol(format!("unknown task {}", task_id)))?;
            let config = state
                .config
                .clone()
                .ok_or_else(|| NodeError::Protocol("task not configured".into()))?;
            if state.my_keypair.is_none() {
                let mut rng = pick_rng(config.hyper.seed, self.node_id(), usize::MAX);
                let keypair = paillier_keygen(config.paillier_bits, &mut rng)?;
                state.my_keypair = Some(keypair);
            }
            let kp = state.my_keypair.as_ref().unwrap();
            (
                biguint_to_hex(kp.public.modulus()),
                kp.public.bits(),
            )
        };
        let value = json!({
            "target": self.node_id(),
            "paillier_n": n_hex,
            "bits": bits,
        });
        let mut failed = Vec::new();
        for nb in self.shared().cfg.neighbors.clone() {
            if self
                .send_sealed_with_retry(&nb.id, MessageType::PubkeyShare, task_id, &value, 3)
                .is_err()
            {
                failed.push(nb.id);
            }
        }
        Ok(failed)
    }

    /// Chooses `n` HE computing agencies uniformly among neighbors and
    /// notifies every neighbor of the selection.
    pub fn select_he_agencies(&self, task_id: &str, round: usize) -> NodeResult<Vec<String>> {
        let config = self.task_config(task_id)?;
        let count = env_he_count(config.he_agency_count);
        let mut neighbor_ids = self.neighbor_ids();
        if count == 0 || count > neighbor_ids.len() {
            return Err(NodeError::Protocol(format!(
                "he_agency_count {} outside 1..={}",
                count,
                neighbor_ids.len()
            )));
        }
        let mut rng = pick_rng(config.hyper.seed, self.node_id(), round);
        neighbor_ids.shuffle(&mut rng);
        let mut agencies: Vec<String> = neighbor_ids.into_iter().take(count).collect();
        agencies.sort();
        let expected = self.shared().cfg.neighbors.len();
        {
            let mut tasks = self.shared().tasks.lock().unwrap();
            if let Some(state) = tasks.get_mut(task_id) {
                state.he_roles.insert(
                    (self.node_id().to_owned(), round),
                    HeRole {
                        target: self.node_id().to_owned(),
                        round,
                        agencies: agencies.clone(),
                        expected_senders: expected,
                    },
                );
            }
        }
        let value = json!({
            "target": self.node_id(),
            "round": round,
            "agencies": agencies,
            "expected_senders": expected,
        });
        for nb in self.shared().cfg.neighbors.clone() {
            let _ = self.send_sealed_with_retry(&nb.id, MessageType::HeRoleNotify, task_id, &value, 3);
        }
        Ok(agencies)
    }

    /// Stores this node's embedding for `round` and flushes any pending
    /// submissions that were waiting for it.
    pub fn publish_embedding(
        &self,
        task_id: &str,
        round: usize,
        embedding: &DenseMatrix,
    ) -> NodeResult<()> {
        let pending = {
            let mut tasks = self.shared().tasks.lock().unwrap();
            let state = tasks
                .get_mut(task_id)
                .ok_or_else(|| NodeError::Protocol(format!("unknown task {}", task_id)))?;
            state
                .published
                .insert(round, PublishedEmbedding::from_matrix(embedding));
            state.advance(round, Phase::EmbeddingComputing);
            let due: Vec<(String, usize)> = state
                .pending_submits
                .iter()
                .filter(|(_, r)| *r == round)
                .cloned()
                .collect();
            state.pending_submits.retain(|(_, r)| *r != round);
            due
        };
        for (target, r) in pending {
            let _ = self.submit_embedding(task_id, &target, r);
        }
        Ok(())
    }

    /// Encrypts this node's published embedding under `target`'s Paillier
    /// key and submits it to one uniformly chosen HE agency.
    pub fn submit_embedding(&self, task_id: &str, target: &str, round: usize) -> NodeResult<()> {
        let (config, pk, embedding, role) = {
            let tasks = self.shared().tasks.lock().unwrap();
            let state = tasks
                .get(task_id)
                .ok_or_else(|| NodeError::Protocol(format!("unknown task {}", task_id)))?;
            if state.submitted.contains(&(target.to_owned(), round)) {
                return Ok(());
            }
            let config = state
                .config
                .clone()
                .ok_or_else(|| NodeError::Protocol("task not configured".into()))?;
            let pk = state
                .target_keys
                .get(target)
                .cloned()
                .ok_or_else(|| NodeError::Protocol(format!("no public key from {}", target)))?;
            let embedding = state
                .published
                .get(&round)
                .cloned()
                .ok_or_else(|| NodeError::Protocol("embedding not published yet".into()))?;
            let role = state
                .he_roles
                .get(&(target.to_owned(), round))
                .cloned()
                .ok_or_else(|| NodeError::Protocol("no HE role notification".into()))?;
            (config, pk, embedding, role)
        };
        let codec = FixedPointCodec::with_defaults(pk.modulus().clone())?;
        let encoded = codec.encode_vector(&embedding.values)?;
        let mut rng = pick_rng(
            config.hyper.seed ^ 0x5eed_caf3,
            self.node_id(),
            round,
        );
        let components = encoded
            .iter()
            .map(|m| paillier_encrypt(&pk, m, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let vector = CiphertextVector::fresh(components, codec.scale_log2());
        // one uniformly chosen HE agency: exactly-one default prevents
        // double counting at the target
        let destination = {
            let mut choices = role.agencies.clone();
            choices.shuffle(&mut rng);
            choices
                .into_iter()
                .next()
                .ok_or_else(|| NodeError::Protocol("no HE agencies listed".into()))?
        };
        let payload = json!({
            "target": target,
            "round": round,
            "ciphertext": WireCiphertext::from_core(&vector),
        });
        let msg = Message::new(
            MessageType::EmbSubmit,
            Some(task_id),
            self.node_id(),
            payload,
        );
        let addr = self.neighbor_addr(&destination)?;
        self.call_recorded(&addr, &msg)?;
        let mut tasks = self.shared().tasks.lock().unwrap();
        if let Some(state) = tasks.get_mut(task_id) {
            state.submitted.insert((target.to_owned(), round));
            state.advance(round, Phase::Submitted);
        }
        Ok(())
    }

    /// Queries a peer's task state; returns (phase name, round, received
    /// submission count for this caller's target round).
    pub fn query_status(
        &self,
        peer_id: &str,
        task_id: &str,
        round: usize,
    ) -> NodeResult<(String, usize, usize)> {
        let value = json!({ "target": self.node_id(), "round": round });
        let reply = self.send_sealed(peer_id, MessageType::StatusQuery, task_id, &value)?;
        if reply.msg_type == MessageType::Error {
            return Err(NodeError::Protocol(format!(
                "status error: {}",
                reply.payload["message"].as_str().unwrap_or("unknown")
            )));
        }
        let opened = self.open_sealed(&reply.payload)?;
        Ok((
            opened["state"].as_str().unwrap_or("unknown").to_owned(),
            opened["round"].as_u64().unwrap_or(0) as usize,
            opened["received"].as_u64().unwrap_or(0) as usize,
        ))
    }

    fn open_sealed(&self, payload: &Value) -> NodeResult<Value> {
        let blob = payload["sealed"]
            .as_str()
            .ok_or_else(|| NodeError::Protocol("expected sealed payload".into()))?;
        let bytes = base64_decode(blob)?;
        let opened = control_open(&self.shared().cfg.identity, &bytes)?;
        Ok(serde_json::from_slice(&opened)?)
    }

    /// Polls the HE agencies until all expected senders reported (or the
    /// window times out), asks each to aggregate-and-broadcast, combines
    /// their sums homomorphically, and decrypts the total.
    pub fn fetch_result(
        &self,
        task_id: &str,
        round: usize,
        agencies: &[String],
    ) -> NodeResult<FetchedSum> {
        let expected = self.shared().cfg.neighbors.len();
        let deadline = Instant::now() + self.shared().cfg.timeout;
        let mut backoff = Duration::from_millis(100);
        loop {
            let mut received = 0usize;
            let mut reachable = 0usize;
            for agency in agencies {
                if let Ok((_, _, count)) = self.query_status(agency, task_id, round) {
                    received += count;
                    reachable += 1;
                }
            }
            if (received >= expected && reachable == agencies.len())
                || Instant::now() >= deadline
            {
                break;
            }
            std::thread::sleep(backoff);
            backoff = (backoff * 2).min(Duration::from_millis(3200));
        }

        let mut records: Vec<SumRecord> = Vec::new();
        let mut missing_agency = false;
        for agency in agencies {
            let value = json!({ "target": self.node_id(), "round": round });
            match self.send_sealed(agency, MessageType::ResultFetch, task_id, &value) {
                Ok(reply) if reply.msg_type == MessageType::SumBroadcast => {
                    let record: SumRecord =
                        serde_json::from_value(reply.payload["sum"].clone())?;
                    records.push(record);
                }
                _ => missing_agency = true,
            }
        }
        self.combine_sums(task_id, round, expected, records, missing_agency)
    }

    fn combine_sums(
        &self,
        task_id: &str,
        round: usize,
        expected: usize,
        records: Vec<SumRecord>,
        missing_agency: bool,
    ) -> NodeResult<FetchedSum> {
        let keypair = {
            let tasks = self.shared().tasks.lock().unwrap();
            let state = tasks
                .get(task_id)
                .ok_or_else(|| NodeError::Protocol(format!("unknown task {}", task_id)))?;
            state
                .my_keypair
                .clone()
                .ok_or_else(|| NodeError::Protocol("no task keypair".into()))?
        };
        let codec = FixedPointCodec::with_defaults(keypair.public.modulus().clone())?;
        let vectors: Vec<CiphertextVector> = records
            .iter()
            .filter(|r| r.addend_count > 0)
            .map(|r| r.to_core_vector())
            .collect::<Result<Vec<_>, _>>()?;
        let addend_count: usize = records.iter().map(|r| r.addend_count).sum();
        let any_partial = records.iter().any(|r| r.partial);
        let partial = missing_agency || any_partial || addend_count < expected;
        if vectors.is_empty() {
            let mut tasks = self.shared().tasks.lock().unwrap();
            if let Some(state) = tasks.get_mut(task_id) {
                state.advance(round, Phase::Done);
            }
            return Ok(FetchedSum {
                sum: Vec::new(),
                addend_count: 0,
                partial,
            });
        }
        let total = secure_sum(&keypair.public, &vectors, DEFAULT_MAX_ADDENDS)?;
        let mut plain = Vec::with_capacity(total.len());
        for c in total.components() {
            plain.push(paillier_decrypt(&keypair, c)?);
        }
        let values = codec.decode_vector(&plain, total.addend_count())?;
        let mut tasks = self.shared().tasks.lock().unwrap();
        if let Some(state) = tasks.get_mut(task_id) {
            state.advance(round, Phase::Done);
        }
        Ok(FetchedSum {
            sum: values,
            addend_count: total.addend_count(),
            partial,
        })
    }

    pub fn task_config(&self, task_id: &str) -> NodeResult<TaskConfig> {
        self.shared()
            .tasks
            .lock()
            .unwrap()
            .get(task_id)
            .and_then(|s| s.config.clone())
            .ok_or_else(|| NodeError::Protocol(format!("unknown task {}", task_id)))
    }

    pub fn task_registered(&self, task_id: &str) -> bool {
        self.shared().tasks.lock().unwrap().contains_key(task_id)
    }

    pub fn task_phase(&self, task_id: &str) -> Option<(Phase, usize)> {
        self.shared()
            .tasks
            .lock()
            .unwrap()
            .get(task_id)
            .map(|s| (s.phase, s.round))
    }

    /// Number of raw (pre-aggregation) ciphertexts this node currently
    /// stores as an HE agency; the destruction contract says this returns
    /// to zero after aggregation.
    pub fn stored_ciphertext_count(&self, task_id: &str) -> usize {
        self.shared()
            .tasks
            .lock()
            .unwrap()
            .get(task_id)
            .map(|s| s.inbox.values().map(HashMap::len).sum())
            .unwrap_or(0)
    }

    /// The Paillier public key this node generated for a task (if any).
    pub fn task_public_key(&self, task_id: &str) -> Option<PaillierPublicKey> {
        self.shared()
            .tasks
            .lock()
            .unwrap()
            .get(task_id)
            .and_then(|s| s.my_keypair.as_ref().map(|kp| kp.public.clone()))
    }

    /// The Paillier public key received from a target for a task.
    pub fn received_target_key(&self, task_id: &str, target: &str) -> Option<PaillierPublicKey> {
        self.shared()
            .tasks
            .lock()
            .unwrap()
            .get(task_id)
            .and_then(|s| s.target_keys.get(target).cloned())
    }
}

impl SumRecord {
    fn to_core_vector(&self) -> NodeResult<CiphertextVector> {
        self.ciphertext.to_core()
    }
}

/// Decrypted, decoded neighbor sum.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchedSum {
    pub sum: Vec<f64>,
    pub addend_count: usize,
    pub partial: bool,
}

// ----------------------------------------------------------------------
// server side
// ----------------------------------------------------------------------

static RECORD_ALL: AtomicBool = AtomicBool::new(false);

fn record_frame(shared: &Shared, outbound: bool, peer: &str, msg: &Message) {
    if !shared.cfg.record_frames && !RECORD_ALL.load(Ordering::SeqCst) {
        return;
    }
    if let Ok(json) = serde_json::to_string(msg) {
        shared.frames.lock().unwrap().push(FrameRecord {
            outbound,
            peer: peer.to_owned(),
            json,
        });
    }
}

fn register_task(shared: &Shared, task: &TaskConfig) -> bool {
    let mut tasks = shared.tasks.lock().unwrap();
    if tasks.contains_key(&task.task_id) {
        return false;
    }
    let mut state = TaskState {
        config: Some(task.clone()),
        ..TaskState::default()
    };
    state.advance(0, Phase::Announced);
    tasks.insert(task.task_id.clone(), state);
    true
}

fn accept_loop(inner: Arc<Inner>, listener: TcpListener) {
    while inner.shared.running.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, addr)) => {
                let conn_inner = Arc::clone(&inner);
                std::thread::spawn(move || {
                    let _ = handle_connection(conn_inner, stream, addr.to_string());
                });
            }
            Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(_) => break,
        }
    }
}

fn handle_connection(
    inner: Arc<Inner>,
    mut stream: std::net::TcpStream,
    peer_addr: String,
) -> NodeResult<()> {
    stream.set_read_timeout(Some(inner.shared.cfg.timeout))?;
    stream.set_write_timeout(Some(inner.shared.cfg.timeout))?;
    let msg = crate::wire::read_frame(&mut stream)?;
    record_frame(&inner.shared, false, &peer_addr, &msg);
    let reply = dispatch(&inner, &msg);
    record_frame(&inner.shared, true, &peer_addr, &reply);
    crate::wire::write_frame(&mut stream, &reply)?;
    Ok(())
}

fn dispatch(inner: &Arc<Inner>, msg: &Message) -> Message {
    let me = inner.shared.cfg.node_id.clone();
    let result = match msg.msg_type {
        MessageType::Hello => handle_hello(inner, msg),
        MessageType::TaskAnnounce => handle_announce(inner, msg),
        MessageType::PubkeyShare => handle_pubkey_share(inner, msg),
        MessageType::HeRoleNotify => handle_role_notify(inner, msg),
        MessageType::EmbSubmit => handle_emb_submit(inner, msg),
        MessageType::SumBroadcast => handle_sum_broadcast(inner, msg),
        MessageType::StatusQuery => handle_status_query(inner, msg),
        MessageType::ResultFetch => handle_result_fetch(inner, msg),
        MessageType::StatusReply | MessageType::Error => Ok(Message::new(
            MessageType::StatusReply,
            msg.task_id.as_deref(),
            &me,
            json!({"state": "ignored"}),
        )),
    };
    match result {
        Ok(reply) => reply,
        Err(e) => Message::error(
            &me,
            msg.task_id.as_deref(),
            error_code(&e),
            &e.to_string(),
        ),
    }
}

fn error_code(e: &NodeError) -> &'static str {
    match e {
        NodeError::Protocol(_) => "protocol",
        NodeError::Crypto(_) => "crypto",
        NodeError::Timeout(_) => "timeout",
        NodeError::Wire(_) => "wire",
        _ => "internal",
    }
}

fn open_sealed_payload(inner: &Arc<Inner>, payload: &Value) -> NodeResult<Value> {
    let blob = payload["sealed"]
        .as_str()
        .ok_or_else(|| NodeError::Protocol("expected sealed payload".into()))?;
    let bytes = base64_decode(blob)?;
    let opened = control_open(&inner.shared.cfg.identity, &bytes)?;
    Ok(serde_json::from_slice(&opened)?)
}

fn handle_hello(inner: &Arc<Inner>, msg: &Message) -> NodeResult<Message> {
    if let Ok(key_json) =
        serde_json::from_value::<IdentityPublicJson>(msg.payload["identity_pubkey"].clone())
    {
        if let Ok(key) = public_key_from_json(&key_json) {
            if let Some(peer_id) = msg.payload["node_id"].as_str() {
                inner
                    .shared
                    .peer_keys
                    .lock()
                    .unwrap()
                    .insert(peer_id.to_owned(), key);
            }
        }
    }
    Ok(Message::new(
        MessageType::Hello,
        None,
        &inner.shared.cfg.node_id,
        json!({
            "node_id": inner.shared.cfg.node_id,
            "identity_pubkey": inner.shared.cfg.identity.public_json(),
        }),
    ))
}

fn handle_announce(inner: &Arc<Inner>, msg: &Message) -> NodeResult<Message> {
    let me = inner.shared.cfg.node_id.clone();
    let opened = open_sealed_payload(inner, &msg.payload)?;
    let task: TaskConfig = serde_json::from_value(opened)?;
    let task_id = msg
        .task_id
        .clone()
        .ok_or_else(|| NodeError::Protocol("announce without task id".into()))?;
    if task.task_id != task_id {
        return Err(NodeError::Protocol("task id mismatch".into()));
    }
    let newly = register_task(&inner.shared, &task);
    if newly {
        // forward once to all neighbors except the sender (BFS flood)
        let weak = inner.shared.weak_self.lock().unwrap().clone();
        let sender = msg.sender.clone();
        let fwd_task = task.clone();
        std::thread::spawn(move || {
            if let Some(strong) = weak.upgrade() {
                let handle = NodeHandle { inner: strong };
                let value = match serde_json::to_value(&fwd_task) {
                    Ok(v) => v,
                    Err(_) => return,
                };
                for nb in handle.shared().cfg.neighbors.clone() {
                    if nb.id == sender {
                        continue;
                    }
                    let _ = handle.send_sealed(
                        &nb.id,
                        MessageType::TaskAnnounce,
                        &fwd_task.task_id,
                        &value,
                    );
                }
                let runner = handle.shared().runner.lock().unwrap().clone();
                if let Some(runner) = runner {
                    runner(handle.clone(), fwd_task);
                }
            }
        });
    }
    Ok(Message::new(
        MessageType::StatusReply,
        Some(&task_id),
        &me,
        json!({"state": if newly { "registered" } else { "known" }}),
    ))
}

fn handle_pubkey_share(inner: &Arc<Inner>, msg: &Message) -> NodeResult<Message> {
    let me = inner.shared.cfg.node_id.clone();
    let opened = open_sealed_payload(inner, &msg.payload)?;
    let task_id = msg.task_id.clone().unwrap_or_default();
    let target = opened["target"]
        .as_str()
        .ok_or_else(|| NodeError::Protocol("pubkey share missing target".into()))?
        .to_owned();
    let n = biguint_from_hex(
        opened["paillier_n"]
            .as_str()
            .ok_or_else(|| NodeError::Protocol("pubkey share missing modulus".into()))?,
    )?;
    let key = PaillierPublicKey::from_modulus(n);
    let mut tasks = inner.shared.tasks.lock().unwrap();
    let state = tasks
        .get_mut(&task_id)
        .ok_or_else(|| NodeError::Protocol(format!("unknown task {}", task_id)))?;
    let replaced = match state.target_keys.get(&target) {
        Some(existing) if existing != &key => true,
        _ => false,
    };
    // last-write-wins on resend
    state.target_keys.insert(target, key);
    Ok(Message::new(
        MessageType::StatusReply,
        Some(&task_id),
        &me,
        json!({"state": if replaced { "replaced" } else { "stored" }}),
    ))
}

fn handle_role_notify(inner: &Arc<Inner>, msg: &Message) -> NodeResult<Message> {
    let me = inner.shared.cfg.node_id.clone();
    let opened = open_sealed_payload(inner, &msg.payload)?;
    let task_id = msg.task_id.clone().unwrap_or_default();
    let role = HeRole {
        target: opened["target"]
            .as_str()
            .ok_or_else(|| NodeError::Protocol("role notify missing target".into()))?
            .to_owned(),
        round: opened["round"].as_u64().unwrap_or(0) as usize,
        agencies: serde_json::from_value(opened["agencies"].clone())?,
        expected_senders: opened["expected_senders"].as_u64().unwrap_or(0) as usize,
    };
    let ready = {
        let mut tasks = inner.shared.tasks.lock().unwrap();
        let state = tasks
            .get_mut(&task_id)
            .ok_or_else(|| NodeError::Protocol(format!("unknown task {}", task_id)))?;
        let key = (role.target.clone(), role.round);
        state.he_roles.insert(key.clone(), role.clone());
        if state.published.contains_key(&role.round) {
            true
        } else {
            if !state.pending_submits.contains(&key) {
                state.pending_submits.push(key);
            }
            false
        }
    };
    if ready {
        // submit on a separate thread so the handler never blocks on
        // another node's availability
        let weak = inner.shared.weak_self.lock().unwrap().clone();
        let target = role.target.clone();
        let round = role.round;
        let task = task_id.clone();
        std::thread::spawn(move || {
            if let Some(strong) = weak.upgrade() {
                let handle = NodeHandle { inner: strong };
                let _ = handle.submit_embedding(&task, &target, round);
            }
        });
    }
    Ok(Message::new(
        MessageType::StatusReply,
        Some(&task_id),
        &me,
        json!({"state": "role_noted"}),
    ))
}

fn handle_emb_submit(inner: &Arc<Inner>, msg: &Message) -> NodeResult<Message> {
    let me = inner.shared.cfg.node_id.clone();
    let task_id = msg.task_id.clone().unwrap_or_default();
    let target = msg.payload["target"]
        .as_str()
        .ok_or_else(|| NodeError::Protocol("submit missing target".into()))?
        .to_owned();
    let round = msg.payload["round"].as_u64().unwrap_or(0) as usize;
    let ciphertext: WireCiphertext = serde_json::from_value(msg.payload["ciphertext"].clone())?;
    let received = {
        let mut tasks = inner.shared.tasks.lock().unwrap();
        let state = tasks
            .get_mut(&task_id)
            .ok_or_else(|| NodeError::Protocol(format!("unknown task {}", task_id)))?;
        let key = (target.clone(), round);
        match state.he_roles.get(&key) {
            Some(role) if role.agencies.contains(&me) => {}
            _ => {
                return Err(NodeError::Protocol(
                    "this node is not an HE agency for the round".into(),
                ))
            }
        }
        let entry = state.inbox.entry(key).or_default();
        entry.insert(msg.sender.clone(), ciphertext);
        state.advance(round, Phase::Aggregating);
        entry.len()
    };
    Ok(Message::new(
        MessageType::StatusReply,
        Some(&task_id),
        &me,
        json!({"state": "accepted", "received": received}),
    ))
}

fn handle_sum_broadcast(inner: &Arc<Inner>, msg: &Message) -> NodeResult<Message> {
    let me = inner.shared.cfg.node_id.clone();
    let task_id = msg.task_id.clone().unwrap_or_default();
    let record: SumRecord = serde_json::from_value(msg.payload["sum"].clone())?;
    let target = msg.payload["target"]
        .as_str()
        .unwrap_or_default()
        .to_owned();
    let round = msg.payload["round"].as_u64().unwrap_or(0) as usize;
    if target == me {
        let mut tasks = inner.shared.tasks.lock().unwrap();
        if let Some(state) = tasks.get_mut(&task_id) {
            state
                .sums_received
                .entry(round)
                .or_default()
                .insert(record.he_agency.clone(), record);
        }
    }
    Ok(Message::new(
        MessageType::StatusReply,
        Some(&task_id),
        &me,
        json!({"state": "sum_noted"}),
    ))
}

fn handle_status_query(inner: &Arc<Inner>, msg: &Message) -> NodeResult<Message> {
    let me = inner.shared.cfg.node_id.clone();
    let opened = open_sealed_payload(inner, &msg.payload)?;
    let task_id = msg.task_id.clone().unwrap_or_default();
    let target = opened["target"].as_str().unwrap_or_default().to_owned();
    let round = opened["round"].as_u64().unwrap_or(0) as usize;
    let (phase, state_round, received) = {
        let tasks = inner.shared.tasks.lock().unwrap();
        let state = tasks
            .get(&task_id)
            .ok_or_else(|| NodeError::Protocol(format!("unknown task {}", task_id)))?;
        let received = state
            .inbox
            .get(&(target.clone(), round))
            .map(HashMap::len)
            .unwrap_or_else(|| {
                state
                    .summed
                    .get(&(target.clone(), round))
                    .map(|s| s.addend_count)
                    .unwrap_or(0)
            });
        (state.phase, state.round, received)
    };
    let reply_value = json!({
        "state": phase.name(),
        "round": state_round,
        "received": received,
    });
    let requester_key = inner
        .shared
        .peer_keys
        .lock()
        .unwrap()
        .get(&msg.sender)
        .cloned();
    let key = requester_key
        .ok_or_else(|| NodeError::Protocol(format!("no identity key for {}", msg.sender)))?;
    let sealed = control_seal(&key, &serde_json::to_vec(&reply_value)?)?;
    Ok(Message::new(
        MessageType::StatusReply,
        Some(&task_id),
        &me,
        json!({"sealed": base64_encode(&sealed)}),
    ))
}

fn handle_result_fetch(inner: &Arc<Inner>, msg: &Message) -> NodeResult<Message> {
    let me = inner.shared.cfg.node_id.clone();
    let opened = open_sealed_payload(inner, &msg.payload)?;
    let task_id = msg.task_id.clone().unwrap_or_default();
    let target = opened["target"]
        .as_str()
        .ok_or_else(|| NodeError::Protocol("result fetch missing target".into()))?
        .to_owned();
    let round = opened["round"].as_u64().unwrap_or(0) as usize;
    if target != msg.sender {
        return Err(NodeError::Protocol(
            "only the target may fetch its result".into(),
        ));
    }
    let record = aggregate_inbox(inner, &task_id, &target, round)?;
    // broadcast the sum to all neighbors (including the target) per the
    // protocol contract, then reply directly as well
    let weak = inner.shared.weak_self.lock().unwrap().clone();
    let bc_record = record.clone();
    let bc_task = task_id.clone();
    let bc_target = target.clone();
    std::thread::spawn(move || {
        if let Some(strong) = weak.upgrade() {
            let handle = NodeHandle { inner: strong };
            let payload = json!({
                "target": bc_target,
                "round": round,
                "sum": bc_record,
            });
            for nb in handle.shared().cfg.neighbors.clone() {
                let msg = Message::new(
                    MessageType::SumBroadcast,
                    Some(&bc_task),
                    handle.node_id(),
                    payload.clone(),
                );
                if let Ok(addr) = handle.neighbor_addr(&nb.id) {
                    let _ = handle.call_recorded(&addr, &msg);
                }
            }
        }
    });
    Ok(Message::new(
        MessageType::SumBroadcast,
        Some(&task_id),
        &me,
        json!({
            "target": target,
            "round": round,
            "sum": record,
        }),
    ))
}

/// Sums the inbox for (target, round), destroys the raw ciphertexts, and
/// retains only the sum. Idempotent: a second fetch re-serves the sum.
fn aggregate_inbox(
    inner: &Arc<Inner>,
    task_id: &str,
    target: &str,
    round: usize,
) -> NodeResult<SumRecord> {
    let me = inner.shared.cfg.node_id.clone();
    let mut tasks = inner.shared.tasks.lock().unwrap();
    let state = tasks
        .get_mut(task_id)
        .ok_or_else(|| NodeError::Protocol(format!("unknown task {}", task_id)))?;
    let key = (target.to_owned(), round);
    if let Some(existing) = state.summed.get(&key) {
        return Ok(existing.clone());
    }
    let role = state.he_roles.get(&key).cloned();
    let entries: Vec<WireCiphertext> = state
        .inbox
        .remove(&key)
        .map(|m| {
            let mut pairs: Vec<(String, WireCiphertext)> = m.into_iter().collect();
            pairs.sort_by(|a, b| a.0.cmp(&b.0));
            pairs.into_iter().map(|(_, c)| c).collect()
        })
        .unwrap_or_default();
    let record = if entries.is_empty() {
        SumRecord {
            ciphertext: WireCiphertext::zero_marker(cnl_core::crypto::DEFAULT_SCALE_LOG2),
            addend_count: 0,
            partial: false,
            he_agency: me.clone(),
        }
    } else {
        let target_key = state
            .target_keys
            .get(target)
            .cloned()
            .ok_or_else(|| NodeError::Protocol(format!("no public key from {}", target)))?;
        let vectors = entries
            .iter()
            .map(|w| w.to_core())
            .collect::<Result<Vec<_>, _>>()?;
        let sum = secure_sum(&target_key, &vectors, DEFAULT_MAX_ADDENDS)?;
        let expected = role.map(|r| r.expected_senders).unwrap_or(0);
        SumRecord {
            ciphertext: WireCiphertext::from_core(&sum),
            addend_count: sum.addend_count(),
            // an individual agency cannot know how many senders chose it,
            // so partial here only flags the degenerate empty case; the
            // target computes the authoritative partial flag
            partial: expected == 0 && sum.addend_count() == 0,
            he_agency: me.clone(),
        }
    };
    state.summed.insert(key, record.clone());
    state.advance(round, Phase::Broadcast);
    Ok(record)
}

// ----------------------------------------------------------------------
// base64 helpers (kept local to the wire layer)
// ----------------------------------------------------------------------

pub(crate) fn base64_encode(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub(crate) fn base64_decode(text: &str) -> NodeResult<Vec<u8>> {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| NodeError::Wire(format!("base64: {}", e)))
}
