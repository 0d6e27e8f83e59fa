//! Session thread plus a latest-wins pose worker.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::thread;

use tokio::sync::mpsc as tmpsc;

use crate::protocol::encode_frame;
use crate::session::{Loaded, PoseJob, Session};

/// One-slot mailbox. Posting replaces whatever has not been taken yet, so a
/// burst of edits costs one pose of the newest state.
pub struct Mailbox<T> {
    slot: Mutex<(Option<T>, bool)>,
    ready: Condvar,
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Mailbox {
            slot: Mutex::new((None, false)),
            ready: Condvar::new(),
        }
    }
}

impl<T> Mailbox<T> {
    /// Returns true if an untaken item was replaced.
    pub fn post(&self, item: T) -> bool {
        let mut g = self.slot.lock().unwrap();
        let replaced = g.0.replace(item).is_some();
        self.ready.notify_one();
        replaced
    }

    pub fn close(&self) {
        self.slot.lock().unwrap().1 = true;
        self.ready.notify_all();
    }

    /// Blocks for the next item; `None` once closed and drained.
    pub fn take(&self) -> Option<T> {
        let mut g = self.slot.lock().unwrap();
        loop {
            if let Some(x) = g.0.take() {
                return Some(x);
            }
            if g.1 {
                return None;
            }
            g = self.ready.wait(g).unwrap();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outbound {
    Text(String),
    Binary(Vec<u8>),
}

#[derive(Debug, Default)]
pub struct WorkerCounters {
    pub poses_computed: AtomicU64,
    pub poses_superseded: AtomicU64,
}

/// Handle to a running session. Dropping the sender side (or calling
/// [`SessionClient::close`]) stops both threads once queued work drains.
pub struct SessionClient {
    input: Option<mpsc::Sender<String>>,
    pub output: tmpsc::UnboundedReceiver<Outbound>,
    pub counters: Arc<WorkerCounters>,
    threads: Vec<thread::JoinHandle<()>>,
}

impl SessionClient {
    pub fn send(&self, text: impl Into<String>) -> bool {
        self.input.as_ref().is_some_and(|tx| tx.send(text.into()).is_ok())
    }

    /// A cloneable sender for feeding the session from another task.
    pub fn sender(&self) -> Option<mpsc::Sender<String>> {
        self.input.clone()
    }

    pub fn close(&mut self) {
        self.input = None;
    }

    pub async fn recv(&mut self) -> Option<Outbound> {
        self.output.recv().await
    }

    pub fn blocking_recv(&mut self) -> Option<Outbound> {
        self.output.blocking_recv()
    }

    /// Closes input and waits for both threads.
    pub fn join(mut self) {
        self.close();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Starts a session on its own thread, with an optional preloaded mesh.
/// Edits are applied in arrival order; each accepted edit posts a pose of
/// the new state, and poses nobody has started yet are dropped in favor
/// of newer ones.
pub fn spawn_session(initial: Option<Arc<Loaded>>) -> SessionClient {
    let (in_tx, in_rx) = mpsc::channel::<String>();
    let (out_tx, out_rx) = tmpsc::unbounded_channel();
    let mailbox: Arc<Mailbox<PoseJob>> = Arc::default();
    let counters: Arc<WorkerCounters> = Arc::default();

    let pose_thread = {
        let mailbox = mailbox.clone();
        let out = out_tx.clone();
        let counters = counters.clone();
        thread::Builder::new()
            .name("dfd-pose".into())
            .spawn(move || {
                while let Some(job) = mailbox.take() {
                    match job.run() {
                        Ok(v) => {
                            counters.poses_computed.fetch_add(1, Ordering::Relaxed);
                            if out.send(Outbound::Binary(encode_frame(job.rev, &v))).is_err() {
                                break;
                            }
                        }
                        Err(e) => log::error!("pose at rev {} failed: {e}", job.rev),
                    }
                }
            })
            .expect("spawn pose thread")
    };

    let session_thread = {
        let counters = counters.clone();
        thread::Builder::new()
            .name("dfd-session".into())
            .spawn(move || {
                let mut session = match initial {
                    Some(l) => Session::with_loaded(l),
                    None => Session::new(),
                };
                if let Some(job) = session.pose_job() {
                    mailbox.post(job);
                }
                for text in in_rx {
                    let (responses, job) = session.handle_text(&text);
                    for r in responses {
                        if out_tx.send(Outbound::Text(r.to_json())).is_err() {
                            mailbox.close();
                            return;
                        }
                    }
                    if let Some(job) = job {
                        if mailbox.post(job) {
                            counters.poses_superseded.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
                mailbox.close();
            })
            .expect("spawn session thread")
    };

    SessionClient {
        input: Some(in_tx),
        output: out_rx,
        counters,
        threads: vec![session_thread, pose_thread],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mailbox_keeps_latest() {
        let m = Mailbox::default();
        assert!(!m.post(1));
        assert!(m.post(2));
        assert!(m.post(3));
        assert_eq!(m.take(), Some(3));
        m.close();
        assert_eq!(m.take(), None);
    }

    #[test]
    fn mailbox_drains_before_closing() {
        let m = Mailbox::default();
        m.post(5);
        m.close();
        assert_eq!(m.take(), Some(5));
        assert_eq!(m.take(), None);
    }
}
