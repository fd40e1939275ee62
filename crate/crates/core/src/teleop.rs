//! Live teleoperation: a 50 Hz simulation steered by remote clients.
//!
//! Wire format on the TCP port: each message is a little-endian `u32` byte
//! length followed by that many bytes of UTF-8 JSON. The WebSocket port
//! carries the same JSON documents as text frames, one per frame.

use std::collections::{BTreeMap, HashMap};
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, NUM_JOINTS};
use crate::error::{RuntimeError, TeleopError};
use crate::gait::{advance_gait_phase, desired_contact};
use crate::nn::Scalar;
use crate::randomization::EpisodeDynamics;
use crate::reward::{dribble_reward, wrap_angle, DribbleInputs};
use crate::rng::{self, SimRng};
use crate::runtime::{global_frame_command, CommandMailbox, ControlRuntime, FsmMode, PolicyBundle, COMMAND_LIMIT};
use crate::world::{reset_world, step_world, Action, WorldState};

/// Frames longer than this close the connection.
pub const MAX_FRAME_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Global-frame ball velocity command (m/s). `id` is echoed in the ack.
    Command {
        vx: f64,
        vy: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotView {
    /// Base position, world frame (m).
    pub pose: [f64; 3],
    /// Heading relative to the global frame (rad).
    pub yaw: f64,
    pub fsm: FsmMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallView {
    pub pos: [f64; 3],
    pub vel: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateView {
    /// Held ball observation, body frame.
    pub ball: [f64; 3],
    /// Estimated drag coefficient, if the estimator ran this tick.
    pub drag: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardView {
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State {
        t: f64,
        tick: u64,
        /// Command in effect, global frame.
        command: [f64; 2],
        robot: RobotView,
        ball: BallView,
        estimate: EstimateView,
        reward: RewardView,
    },
    /// A command took effect at `tick`. `superseded` commands were replaced
    /// by a newer one before the tick that would have used them.
    Ack {
        id: Option<u64>,
        tick: u64,
        vx: f64,
        vy: f64,
        superseded: bool,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

/// Parses one client document.
pub fn parse_client_message(text: &str) -> Result<ClientMessage, TeleopError> {
    let msg: ClientMessage = serde_json::from_str(text).map_err(|e| TeleopError::MalformedMessage(e.to_string()))?;
    let ClientMessage::Command { vx, vy, .. } = &msg;
    if !vx.is_finite() || !vy.is_finite() {
        return Err(TeleopError::MalformedMessage("non-finite command".into()));
    }
    Ok(msg)
}

pub fn encode_frame(json: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + json.len());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out
}

/// Incremental decoder for length-prefixed frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame, if any. Oversized frames are an error and leave
    /// the decoder unusable.
    pub fn next_frame(&mut self) -> Result<Option<Vec<u8>>, TeleopError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]) as usize;
        if len > MAX_FRAME_BYTES {
            return Err(TeleopError::MalformedMessage(format!("frame of {len} bytes exceeds limit")));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let frame = self.buf[4..4 + len].to_vec();
        self.buf.drain(..4 + len);
        Ok(Some(frame))
    }
}

/// Simulation driven by the teleop tick.
pub struct TeleopSim<T> {
    pub world: WorldState,
    pub dynamics: EpisodeDynamics,
    /// `None` holds the stand pose.
    pub runtime: Option<ControlRuntime<T>>,
    pub config: TrainConfig,
    pub tick: u64,
    /// Current command, global frame.
    pub command: Vector2<f64>,
    initial_yaw: f64,
    actions: [[f64; NUM_JOINTS]; 3],
    sensor_rng: SimRng,
    last_reward: f64,
}

impl<T: Scalar> TeleopSim<T> {
    pub fn new(
        config: TrainConfig,
        dribble: Option<PolicyBundle<T>>,
        recovery: Option<PolicyBundle<T>>,
        seed: u64,
    ) -> Result<Self, TeleopError> {
        let dynamics = EpisodeDynamics::nominal(crate::config::TaskMode::Dribble);
        let mut world_rng = rng::stream(seed, 0);
        let mut env = config.env.clone();
        env.reset_ball_radius = 0.5;
        let world = reset_world(&mut world_rng, crate::config::TaskMode::Dribble, &env, &dynamics, &config.sim, None)
            .map_err(|e| TeleopError::Io(std::io::Error::other(e)))?;
        let runtime = dribble.map(|d| {
            ControlRuntime::new(&world, &config.sim.robot, Some(d), recovery, dynamics.action_delay_substeps)
                .with_env_config(&config.env)
        });
        Ok(Self {
            initial_yaw: world.robot.yaw_global,
            world,
            dynamics,
            runtime,
            config,
            tick: 0,
            command: Vector2::zeros(),
            actions: [[0.0; NUM_JOINTS]; 3],
            sensor_rng: rng::stream(seed, 1),
            last_reward: 0.0,
        })
    }

    /// Sets the command used from the next tick on, clamped per axis.
    pub fn set_command(&mut self, vx: f64, vy: f64) -> Vector2<f64> {
        self.command = Vector2::new(vx.clamp(-COMMAND_LIMIT, COMMAND_LIMIT), vy.clamp(-COMMAND_LIMIT, COMMAND_LIMIT));
        self.command
    }

    /// One 20 ms control step.
    pub fn step(&mut self) -> Result<(), TeleopError> {
        let sim = &self.config.sim;
        let err = |e: RuntimeError| TeleopError::Io(std::io::Error::other(e));
        let targets = match self.runtime.as_mut() {
            Some(rt) => {
                let truth = self.world.ball_in_body();
                rt.camera.update(self.world.time, &truth, &self.dynamics, true, &mut self.sensor_rng);
                let stand = Action::stand(&sim.robot);
                let targets = match rt.run_policy_step(
                    &self.world,
                    self.command,
                    &sim.robot,
                    sim.substeps_per_control,
                    &mut self.sensor_rng,
                ) {
                    Ok(t) => t,
                    Err(RuntimeError::MissingPolicy("recovery")) => {
                        rt.action_delay.schedule(stand, self.world.substep, sim.substeps_per_control)
                    }
                    Err(e) => return Err(err(e)),
                };
                self.actions = [rt.prev_action, self.actions[0], self.actions[1]];
                targets
            }
            None => vec![Action::stand(&sim.robot)],
        };
        step_world(&mut self.world, &targets, &self.dynamics, sim).map_err(|e| err(e.into()))?;
        let gait = &self.config.env.gait;
        let kappa = desired_contact(&advance_gait_phase(self.world.time, gait).phases, gait);
        let a = &self.actions;
        let inp = DribbleInputs::from_world(
            &self.world,
            self.command,
            self.initial_yaw,
            kappa,
            [&a[0], &a[1], &a[2]],
            &sim.robot,
        );
        self.last_reward = dribble_reward(&inp, &self.config.reward).total;
        self.tick += 1;
        Ok(())
    }

    pub fn fsm_mode(&self) -> FsmMode {
        self.runtime.as_ref().map_or(FsmMode::Dribble, |rt| rt.fsm.mode)
    }

    /// World-frame command for the current global-frame command.
    pub fn world_command(&self) -> Vector2<f64> {
        global_frame_command(self.command, self.initial_yaw)
    }

    pub fn state_message(&self) -> ServerMessage {
        let r = &self.world.robot;
        let b = &self.world.ball;
        let (ball_est, drag) = match &self.runtime {
            Some(rt) => (rt.camera.estimate, rt.last_estimate.get(5).copied()),
            None => (self.world.ball_in_body(), None),
        };
        ServerMessage::State {
            t: self.world.time,
            tick: self.tick,
            command: [self.command.x, self.command.y],
            robot: RobotView {
                pose: [r.base_position.x, r.base_position.y, r.base_position.z],
                yaw: wrap_angle(r.yaw_global - self.initial_yaw),
                fsm: self.fsm_mode(),
            },
            ball: BallView {
                pos: [b.position.x, b.position.y, b.position.z],
                vel: [b.velocity.x, b.velocity.y, b.velocity.z],
            },
            estimate: EstimateView { ball: [ball_est.x, ball_est.y, ball_est.z], drag },
            reward: RewardView { total: self.last_reward },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleopConfig {
    pub tcp_addr: SocketAddr,
    /// WebSocket shim; `None` disables it.
    pub ws_addr: Option<SocketAddr>,
    pub tick_hz: f64,
    pub state_hz: f64,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            tcp_addr: "127.0.0.1:7070".parse().unwrap(),
            ws_addr: Some("127.0.0.1:7071".parse().unwrap()),
            tick_hz: 50.0,
            state_hz: 20.0,
        }
    }
}

struct Pending {
    client: usize,
    id: Option<u64>,
    command: Vector2<f64>,
}

#[derive(Default)]
struct Shared {
    stop: AtomicBool,
    mailbox: CommandMailbox,
    next_seq: AtomicU64,
    next_client: AtomicUsize,
    pending: Mutex<BTreeMap<u64, Pending>>,
    clients: Mutex<HashMap<usize, Sender<String>>>,
    state: Mutex<Option<String>>,
    tick: AtomicU64,
}

impl Shared {
    fn send_to(&self, client: usize, msg: &ServerMessage) {
        if let Some(tx) = self.clients.lock().unwrap().get(&client) {
            let _ = tx.send(msg.to_json());
        }
    }

    fn accept_command(&self, client: usize, msg: ClientMessage) {
        let ClientMessage::Command { vx, vy, id } = msg;
        let cmd = Vector2::new(vx.clamp(-COMMAND_LIMIT, COMMAND_LIMIT), vy.clamp(-COMMAND_LIMIT, COMMAND_LIMIT));
        let seq = self.next_seq.fetch_add(1, Ordering::SeqCst);
        self.pending.lock().unwrap().insert(seq, Pending { client, id, command: cmd });
        self.mailbox.post(seq, cmd);
    }

    fn handle_text(&self, client: usize, text: &str) {
        match parse_client_message(text) {
            Ok(msg) => self.accept_command(client, msg),
            Err(e) => {
                log::warn!("client {client}: {e}");
                self.send_to(client, &ServerMessage::Error { message: e.to_string() });
            }
        }
    }

    fn register(&self) -> (usize, Receiver<String>) {
        let id = self.next_client.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel();
        self.clients.lock().unwrap().insert(id, tx);
        (id, rx)
    }

    fn unregister(&self, id: usize) {
        self.clients.lock().unwrap().remove(&id);
        self.pending.lock().unwrap().retain(|_, p| p.client != id);
    }

    /// Acks every pending command up to `seq`, which took effect at `tick`.
    fn acknowledge(&self, seq: u64, tick: u64) {
        let mut pending = self.pending.lock().unwrap();
        let later = pending.split_off(&(seq + 1));
        let done = std::mem::replace(&mut *pending, later);
        drop(pending);
        for (s, p) in done {
            let msg = ServerMessage::Ack { id: p.id, tick, vx: p.command.x, vy: p.command.y, superseded: s != seq };
            self.send_to(p.client, &msg);
        }
    }
}

/// Running teleop service. Dropping it stops every thread.
pub struct TeleopHandle {
    pub tcp_addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    sim_result: Arc<Mutex<Option<TeleopError>>>,
}

impl TeleopHandle {
    /// Current simulation tick.
    pub fn tick(&self) -> u64 {
        self.shared.tick.load(Ordering::SeqCst)
    }

    pub fn client_count(&self) -> usize {
        self.shared.clients.lock().unwrap().len()
    }

    pub fn is_running(&self) -> bool {
        !self.shared.stop.load(Ordering::SeqCst)
    }

    /// Stops the service and returns the simulation error, if one ended it.
    pub fn shutdown(mut self) -> Result<(), TeleopError> {
        self.stop_threads();
        match self.sim_result.lock().unwrap().take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Blocks until the simulation stops on its own (on error).
    pub fn wait(self) -> Result<(), TeleopError> {
        while self.is_running() {
            std::thread::sleep(Duration::from_millis(100));
        }
        self.shutdown()
    }

    fn stop_threads(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for TeleopHandle {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn bind(addr: SocketAddr) -> Result<TcpListener, TeleopError> {
    let l = TcpListener::bind(addr).map_err(|source| TeleopError::Bind { addr: addr.to_string(), source })?;
    l.set_nonblocking(true)?;
    Ok(l)
}

const POLL: Duration = Duration::from_millis(5);

fn spawn_acceptor(listener: TcpListener, shared: Arc<Shared>, serve: fn(TcpStream, Arc<Shared>)) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let mut conns = Vec::new();
        while !shared.stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    log::info!("teleop client connected from {peer}");
                    let s = shared.clone();
                    conns.push(std::thread::spawn(move || serve(stream, s)));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
                Err(e) => log::warn!("accept failed: {e}"),
            }
            conns.retain(|h: &JoinHandle<()>| !h.is_finished());
        }
        for c in conns {
            let _ = c.join();
        }
    })
}

fn serve_tcp(mut stream: TcpStream, shared: Arc<Shared>) {
    let (id, rx) = shared.register();
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(POLL));
    let mut decoder = FrameDecoder::default();
    let mut buf = [0u8; 4096];
    'conn: while !shared.stop.load(Ordering::SeqCst) {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => decoder.push(&buf[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        loop {
            match decoder.next_frame() {
                Ok(Some(frame)) => match std::str::from_utf8(&frame) {
                    Ok(text) => shared.handle_text(id, text),
                    Err(e) => shared.send_to(id, &ServerMessage::Error { message: format!("malformed message: {e}") }),
                },
                Ok(None) => break,
                Err(e) => {
                    log::warn!("client {id}: {e}; closing");
                    break 'conn;
                }
            }
        }
        while let Ok(out) = rx.try_recv() {
            if stream.write_all(&encode_frame(&out)).is_err() {
                break 'conn;
            }
        }
    }
    shared.unregister(id);
}

fn serve_ws(stream: TcpStream, shared: Arc<Shared>) {
    use tungstenite::{Error as WsError, Message};
    let _ = stream.set_nodelay(true);
    // Handshake in blocking mode, then poll with a short read timeout.
    let _ = stream.set_nonblocking(false);
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("websocket handshake failed: {e}");
            return;
        }
    };
    let _ = ws.get_ref().set_read_timeout(Some(POLL));
    let (id, rx) = shared.register();
    while !shared.stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => shared.handle_text(id, &text),
            Ok(Message::Binary(bytes)) => match std::str::from_utf8(&bytes) {
                Ok(text) => shared.handle_text(id, text),
                Err(e) => shared.send_to(id, &ServerMessage::Error { message: format!("malformed message: {e}") }),
            },
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        let mut failed = false;
        while let Ok(out) = rx.try_recv() {
            if ws.write(Message::text(out)).is_err() {
                failed = true;
                break;
            }
        }
        if failed
            || matches!(ws.flush(), Err(e) if !matches!(&e, WsError::Io(io) if io.kind() == ErrorKind::WouldBlock))
        {
            break;
        }
    }
    let _ = ws.close(None);
    shared.unregister(id);
}

/// Sleeps until `deadline` unless the service is stopping.
fn sleep_until(deadline: Instant, stop: &AtomicBool) {
    while !stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        std::thread::sleep((deadline - now).min(Duration::from_millis(20)));
    }
}

/// Starts the simulation tick, the state broadcaster and the network
/// acceptors. With no client connected the simulation idles on a zero
/// command.
pub fn teleop_serve<T: Scalar + Send + 'static>(
    sim: TeleopSim<T>,
    cfg: &TeleopConfig,
) -> Result<TeleopHandle, TeleopError> {
    let tcp = bind(cfg.tcp_addr)?;
    let ws = cfg.ws_addr.map(bind).transpose()?;
    let tcp_addr = tcp.local_addr()?;
    let ws_addr = ws.as_ref().map(|l| l.local_addr()).transpose()?;
    let shared = Arc::new(Shared::default());
    *shared.state.lock().unwrap() = Some(sim.state_message().to_json());
    let sim_result = Arc::new(Mutex::new(None));
    let mut threads = Vec::new();

    let tick_period = Duration::from_secs_f64(1.0 / cfg.tick_hz);
    {
        let shared = shared.clone();
        let result = sim_result.clone();
        let mut sim = sim;
        threads.push(std::thread::spawn(move || {
            let mut next = Instant::now();
            while !shared.stop.load(Ordering::SeqCst) {
                let tick = sim.tick;
                if let Some((seq, cmd)) = shared.mailbox.take() {
                    sim.set_command(cmd.x, cmd.y);
                    shared.acknowledge(seq, tick);
                }
                if let Err(e) = sim.step() {
                    log::error!("teleop simulation stopped: {e}");
                    *result.lock().unwrap() = Some(e);
                    shared.stop.store(true, Ordering::SeqCst);
                    break;
                }
                *shared.state.lock().unwrap() = Some(sim.state_message().to_json());
                shared.tick.store(sim.tick, Ordering::SeqCst);
                next += tick_period;
                sleep_until(next, &shared.stop);
            }
        }));
    }

    let state_period = Duration::from_secs_f64(1.0 / cfg.state_hz);
    {
        let shared = shared.clone();
        threads.push(std::thread::spawn(move || {
            let mut next = Instant::now();
            while !shared.stop.load(Ordering::SeqCst) {
                if let Some(state) = shared.state.lock().unwrap().clone() {
                    for tx in shared.clients.lock().unwrap().values() {
                        let _ = tx.send(state.clone());
                    }
                }
                next += state_period;
                sleep_until(next, &shared.stop);
            }
        }));
    }

    threads.push(spawn_acceptor(tcp, shared.clone(), serve_tcp));
    if let Some(ws) = ws {
        threads.push(spawn_acceptor(ws, shared.clone(), serve_ws));
    }
    log::info!(
        "teleop listening on {tcp_addr} (tcp){}",
        ws_addr.map(|a| format!(", {a} (websocket)")).unwrap_or_default()
    );
    Ok(TeleopHandle { tcp_addr, ws_addr, shared, threads, sim_result })
}

/// Blocking TCP client, for tools and tests.
pub struct TeleopClient {
    stream: TcpStream,
    decoder: FrameDecoder,
}

impl TeleopClient {
    pub fn connect(addr: SocketAddr) -> Result<Self, TeleopError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream, decoder: FrameDecoder::default() })
    }

    pub fn send_raw(&mut self, text: &str) -> Result<(), TeleopError> {
        self.stream.write_all(&encode_frame(text))?;
        Ok(())
    }

    pub fn send_command(&mut self, vx: f64, vy: f64, id: Option<u64>) -> Result<(), TeleopError> {
        self.send_raw(&serde_json::to_string(&ClientMessage::Command { vx, vy, id }).unwrap())
    }

    /// Next server message, waiting at most `timeout`.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<ServerMessage>, TeleopError> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 4096];
        loop {
            if let Some(frame) = self.decoder.next_frame()? {
                let text = String::from_utf8(frame).map_err(|e| TeleopError::MalformedMessage(e.to_string()))?;
                return serde_json::from_str(&text).map(Some).map_err(|e| TeleopError::MalformedMessage(e.to_string()));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            self.stream.set_read_timeout(Some(deadline - now))?;
            match self.stream.read(&mut buf) {
                Ok(0) => return Err(TeleopError::Io(ErrorKind::UnexpectedEof.into())),
                Ok(n) => self.decoder.push(&buf[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => return Ok(None),
                Err(e) => return Err(e.into()),
            }
        }
    }
}
