#![cfg(feature = "remote")]

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use autoreply::data::{Example, Label};
use autoreply::scorer::wire::{self, MESSAGE_ROLE};
use autoreply::scorer::{RemoteScorer, Scorer, TabularScorer};
use autoreply::search::{autoreply_search, SearchConfig};
use autoreply::Error;
use tiny_http::{Header, Method, Response, Server};

struct Backend {
    scorer: TabularScorer,
    by_message: HashMap<String, Example>,
    version: String,
    posts: AtomicUsize,
}

impl Backend {
    fn example(&self, ctx: &[autoreply::data::ContextBlock]) -> Example {
        let last = ctx.last().expect("message block");
        assert_eq!(last.role, MESSAGE_ROLE);
        self.by_message[&last.text].clone()
    }

    fn handle(&self, method: &Method, url: &str, body: &str) -> (u16, String) {
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        let param = |key: &str| {
            form_urlencoded::parse(query.as_bytes())
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.into_owned())
        };
        match (method, path) {
            (Method::Post, wire::NEXT_TOKEN_PATH) => {
                self.posts.fetch_add(1, Ordering::SeqCst);
                let req: wire::NextTokenRequest = serde_json::from_str(body).unwrap();
                let items = req
                    .items
                    .iter()
                    .map(|it| {
                        let d = self
                            .scorer
                            .next_token_logprobs(&self.example(&it.context), &it.prefix_tokens)
                            .unwrap();
                        wire::NextTokenResult {
                            tokens: d.entries().iter().map(|e| e.token).collect(),
                            logprobs: d.entries().iter().map(|e| e.logprob).collect(),
                        }
                    })
                    .collect();
                let resp = wire::NextTokenResponse {
                    items,
                    version: self.version.clone(),
                };
                (200, serde_json::to_string(&resp).unwrap())
            }
            (Method::Post, wire::SEQUENCE_PATH) => {
                self.posts.fetch_add(1, Ordering::SeqCst);
                let req: wire::SequenceRequest = serde_json::from_str(body).unwrap();
                let items = req
                    .items
                    .iter()
                    .map(|it| {
                        let ex = self.example(&it.context);
                        wire::SequenceResult {
                            logprob: self.scorer.sequence_logprob(&ex, &it.tokens).unwrap(),
                            per_token: Vec::new(),
                        }
                    })
                    .collect();
                let resp = wire::SequenceResponse {
                    items,
                    version: self.version.clone(),
                };
                (200, serde_json::to_string(&resp).unwrap())
            }
            (Method::Get, wire::TOKENIZE_PATH) => {
                let tokens = self.scorer.tokenize(&param("text").unwrap_or_default()).unwrap();
                (200, serde_json::to_string(&wire::TokenizeResponse { tokens }).unwrap())
            }
            (Method::Get, wire::DETOKENIZE_PATH) => {
                let tokens = wire::decode_token_list(&param("tokens").unwrap_or_default()).unwrap();
                let text = self.scorer.detokenize(&tokens).unwrap();
                (200, serde_json::to_string(&wire::DetokenizeResponse { text }).unwrap())
            }
            _ => (404, "{}".into()),
        }
    }
}

/// In-process scoring server on an ephemeral port.
fn serve(backend: Backend) -> (String, Arc<Backend>) {
    let server = Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let backend = Arc::new(backend);
    let shared = backend.clone();
    thread::spawn(move || {
        for mut request in server.incoming_requests() {
            let mut body = String::new();
            request.as_reader().read_to_string(&mut body).unwrap();
            let (status, text) = shared.handle(request.method(), request.url(), &body);
            let header = Header::from_bytes("Content-Type", "application/json").unwrap();
            let _ = request.respond(Response::from_string(text).with_status_code(status).with_header(header));
        }
    });
    (url, backend)
}

fn fixture() -> (TabularScorer, Vec<Example>, Vec<Example>) {
    let mut s = TabularScorer::new("f1", &["u", "v", "w", "<eos>"], Some(3));
    let bad: Vec<Example> = (1..=3)
        .map(|i| Example::new(format!("B{i}"), format!("bad {i}"), Label::Nonsense))
        .collect();
    let good = vec![Example::new("G1", "good 1", Label::Good)];
    for b in &bad {
        s.set_default(&b.id, &[(0, 0.6), (1, 0.3), (2, 0.05), (3, 0.05)])
            .unwrap();
    }
    s.set_default("G1", &[(0, 0.05), (1, 0.6), (2, 0.3), (3, 0.05)])
        .unwrap();
    (s, bad, good)
}

fn backend(version: &str) -> (Backend, Vec<Example>, Vec<Example>) {
    let (scorer, bad, good) = fixture();
    let by_message = bad
        .iter()
        .chain(&good)
        .map(|e| (e.message.clone(), e.clone()))
        .collect();
    let b = Backend {
        scorer,
        by_message,
        version: version.into(),
        posts: AtomicUsize::new(0),
    };
    (b, bad, good)
}

fn refs(v: &[Example]) -> Vec<&Example> {
    v.iter().collect()
}

#[test]
fn remote_matches_local_scorer() {
    let (b, bad, good) = backend("v7");
    let local = fixture().0;
    let (url, _) = serve(b);
    let remote = RemoteScorer::connect(&url, 4, Some(3)).unwrap();
    assert_eq!(remote.version(), "remote:v7");

    let ex = &bad[0];
    // Only log-probs travel on the wire; probabilities are recomputed from them.
    let logprobs = |s: &dyn Scorer| -> Vec<(u32, f64)> {
        let d = s.next_token_logprobs(ex, &[0, 1]).unwrap();
        d.entries().iter().map(|e| (e.token, e.logprob)).collect()
    };
    assert_eq!(logprobs(&remote), logprobs(&local));
    let lp = remote.sequence_logprob(&good[0], &[1, 2]).unwrap();
    assert_eq!(lp, local.sequence_logprob(&good[0], &[1, 2]).unwrap());
    assert_eq!(remote.tokenize("u w").unwrap(), vec![0, 2]);
    assert_eq!(remote.detokenize(&[1, 0]).unwrap(), "v u");

    let cfg = SearchConfig {
        p: 0.8,
        k: 3,
        topn: 2,
        t_max: 1,
        t_prune: 1,
        t_delta: 2.0,
        ..SearchConfig::default()
    };
    let far = autoreply_search(&remote, &refs(&bad), &refs(&good), &cfg).unwrap();
    let near = autoreply_search(&local, &refs(&bad), &refs(&good), &cfg).unwrap();
    assert_eq!(far.records, near.records);
}

#[test]
fn batches_are_split_by_batch_size() {
    let (b, bad, _) = backend("v1");
    let (url, shared) = serve(b);
    let remote = RemoteScorer::connect(&url, 4, Some(3)).unwrap().with_batch_size(2);
    let before = shared.posts.load(Ordering::SeqCst);
    let prefixes: Vec<Vec<u32>> = (0..5).map(|i| vec![i % 4]).collect();
    let items: Vec<_> = prefixes.iter().map(|p| (&bad[0], p.as_slice())).collect();
    assert_eq!(remote.next_token_logprobs_batch(&items).unwrap().len(), 5);
    assert_eq!(shared.posts.load(Ordering::SeqCst) - before, 3);
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let err = RemoteScorer::connect("http://127.0.0.1:9", 4, None).err().unwrap();
    assert!(matches!(err, Error::Transport(_)), "{err:?}");
    assert!(err.is_scorer_failure());
}

#[test]
fn wrong_endpoint_is_reported() {
    let (b, _, _) = backend("v1");
    let (url, _) = serve(b);
    let err = RemoteScorer::connect(&format!("{url}/nope"), 4, None).err().unwrap();
    assert!(err.is_scorer_failure(), "{err:?}");
}

#[test]
fn token_lists_round_trip() {
    assert_eq!(wire::encode_token_list(&[3, 1, 4]), "3,1,4");
    assert_eq!(wire::decode_token_list("3,1,4"), Some(vec![3, 1, 4]));
    assert_eq!(wire::decode_token_list(""), Some(vec![]));
    assert_eq!(wire::decode_token_list("3,x"), None);
}
