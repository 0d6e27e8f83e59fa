//! Interactive editing over a websocket: JSON control messages in, JSON
//! replies and binary vertex frames out.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod protocol;
pub mod session;
pub mod transport;
pub mod worker;

pub use protocol::{decode_frame, encode_frame, Request, Response, SessionStats};
pub use session::{Loaded, PoseJob, Session, SnapshotState};
pub use transport::serve;
pub use worker::{spawn_session, Mailbox, Outbound, SessionClient};
