use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::client::{ClientOutcome, ClientSession};
use super::server::{ServerOptions, ServerSession};
use super::transport::{serve_stream, InProcessTransport, TcpTransport, Transport};
use super::wire::WireMessage;
use super::SessionConfig;
use crate::error::{Error, ProtocolErrorCode, Result};
use crate::lattice::{ClientSecret, GGramTail, Lattice, TokenId};
use crate::lm::{sample, LmBackend, PpmiEmbeddings};
use crate::rng;
use crate::transcript::TranscriptRecord;

/// Independent client streams derived from one seed: true-token sampling,
/// noise sampling and the permutation prime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientSeeds {
    pub sample: u64,
    pub noise: u64,
    pub prime: u64,
}

impl ClientSeeds {
    pub fn from_seed(seed: u64) -> Self {
        ClientSeeds {
            sample: rng::derive_seed(seed, &[1]),
            noise: rng::derive_seed(seed, &[2]),
            prime: rng::derive_seed(seed, &[3]),
        }
    }

    pub fn client<'a>(
        &self,
        config: SessionConfig,
        vocab_size: usize,
        vocab_hash: &str,
        embeddings: Option<&'a PpmiEmbeddings>,
    ) -> Result<ClientSession<'a>> {
        let secret = ClientSecret::generate(&mut rng::stream(self.prime), vocab_size);
        ClientSession::new(
            config,
            secret,
            vocab_size,
            vocab_hash,
            embeddings,
            rng::stream(self.sample),
            rng::stream(self.noise),
        )
    }
}

/// Drive a full session from the client side.
///
/// If the client fails mid-session it sends an `Error` so the server aborts
/// too.
pub fn run_session<T: Transport + ?Sized>(
    mut client: ClientSession<'_>,
    transport: &mut T,
) -> Result<ClientOutcome> {
    match transport.roundtrip(&client.hello())? {
        WireMessage::Hello { .. } => {}
        WireMessage::Error { code, detail } => return Err(Error::protocol(code, detail)),
        other => {
            return Err(Error::protocol(
                ProtocolErrorCode::Unexpected,
                format!("expected hello, got {}", other.kind()),
            ))
        }
    }
    let mut reply = transport.roundtrip(&client.start())?;
    while !client.is_complete() {
        let tokens = match client.client_step(reply) {
            Ok(tokens) => tokens,
            Err(err) => {
                if let Error::Protocol { code, detail } = &err {
                    if *code != ProtocolErrorCode::Transport {
                        let _ = transport.roundtrip(&WireMessage::error(*code, detail.clone()));
                    }
                }
                return Err(err);
            }
        };
        reply = transport.roundtrip(&tokens)?;
    }
    if let WireMessage::Error { code, detail } = reply {
        return Err(Error::protocol(code, detail));
    }
    let t = client.lattice().len() as u64;
    match transport.roundtrip(&WireMessage::Done { t })? {
        WireMessage::Done { t: echoed } if echoed == t => Ok(client.finish()),
        WireMessage::Error { code, detail } => Err(Error::protocol(code, detail)),
        other => Err(Error::protocol(
            ProtocolErrorCode::Unexpected,
            format!("expected done, got {}", other.kind()),
        )),
    }
}

/// Run a session against an in-process server.
pub fn run_in_process(
    config: SessionConfig,
    backend: Arc<dyn LmBackend>,
    options: ServerOptions,
    embeddings: Option<&PpmiEmbeddings>,
    seeds: ClientSeeds,
) -> Result<(TranscriptRecord, ClientOutcome)> {
    let vocab_hash = options.vocab_hash.clone().unwrap_or_default();
    let client = seeds.client(config, backend.vocab_size(), &vocab_hash, embeddings)?;
    let mut transport = InProcessTransport::new(ServerSession::new(backend, options));
    let outcome = run_session(client, &mut transport)?;
    Ok((transport.server.transcript(), outcome))
}

/// Accept a single connection on `listener` in a background thread and
/// return the resulting transcript.
pub fn spawn_tcp_server(
    listener: TcpListener,
    backend: Arc<dyn LmBackend>,
    options: ServerOptions,
) -> JoinHandle<Result<TranscriptRecord>> {
    thread::spawn(move || {
        let (stream, _) = listener.accept()?;
        stream.set_nodelay(true)?;
        let session = serve_stream(stream, ServerSession::new(backend, options))?;
        Ok(session.transcript())
    })
}

/// Serve sessions forever, one thread per connection. `on_done` receives each
/// transcript (complete or not) when its connection closes.
pub fn serve_tcp<F>(
    listener: TcpListener,
    backend: Arc<dyn LmBackend>,
    options: ServerOptions,
    on_done: F,
) -> Result<()>
where
    F: Fn(SocketAddr, Result<TranscriptRecord>) + Send + Sync + 'static,
{
    let on_done = Arc::new(on_done);
    for stream in listener.incoming() {
        let stream = stream?;
        let peer = stream.peer_addr()?;
        let backend = Arc::clone(&backend);
        let options = options.clone();
        let on_done = Arc::clone(&on_done);
        thread::spawn(move || {
            let result = serve_stream(stream, ServerSession::new(backend, options))
                .map(|session| session.transcript());
            on_done(peer, result);
        });
    }
    Ok(())
}

/// Run a session over a loopback TCP connection.
pub fn run_over_tcp(
    config: SessionConfig,
    backend: Arc<dyn LmBackend>,
    options: ServerOptions,
    embeddings: Option<&PpmiEmbeddings>,
    seeds: ClientSeeds,
) -> Result<(TranscriptRecord, ClientOutcome)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let vocab_hash = options.vocab_hash.clone().unwrap_or_default();
    let vocab_size = backend.vocab_size();
    let server = spawn_tcp_server(listener, backend, options);
    let client = seeds.client(config, vocab_size, &vocab_hash, embeddings)?;
    let mut transport = TcpTransport::connect(addr)?;
    let outcome = run_session(client, &mut transport);
    drop(transport);
    let transcript = server
        .join()
        .map_err(|_| Error::protocol(ProtocolErrorCode::Transport, "server thread panicked"))??;
    Ok((transcript, outcome?))
}

/// Plain generation with no lattice: the same sampler, prompt handling and
/// padding as the client, conditioning on the true history only.
pub fn generate_plain(
    backend: &dyn LmBackend,
    config: &SessionConfig,
    sample_seed: u64,
) -> Result<Vec<TokenId>> {
    let mut rng = rng::stream(sample_seed);
    let empty = Lattice::new(1)?;
    let mut history: Vec<TokenId> = Vec::with_capacity(config.steps());
    let mut ended = false;
    for step in 1..=config.steps() {
        let token = if step <= config.prompt.len() {
            config.prompt[step - 1]
        } else if ended {
            config.eos.expect("ended implies an eos token")
        } else {
            let tail = GGramTail::of_history(&history, config.g, config.bos);
            let dist = backend.next_dist(&empty, &tail, config.k)?;
            let token = sample(&dist, &config.sampler, &history, &mut rng);
            ended = Some(token) == config.eos;
            token
        };
        history.push(token);
    }
    Ok(history)
}
