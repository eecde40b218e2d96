//! JSON-lines front-end for key delivery.
//!
//! One request per line, one response per line, in order. Requests name a
//! command and the node pair it concerns:
//!
//! ```text
//! {"cmd":"status","node":"N1","peer":"N3"}
//! {"cmd":"get_key","node":"N1","peer":"N3","size_bits":256}
//! {"cmd":"get_key_with_id","node":"N3","peer":"N1","key_id":"00..01"}
//! ```
//!
//! Successful responses carry `"ok":true` and the command's payload; key
//! material travels as lowercase hex. Failures carry `"ok":false` and one
//! of the codes `DEPLETED`, `UNKNOWN_NODE` or `BAD_REQUEST` plus a
//! human-readable message. A malformed line is answered with
//! `BAD_REQUEST` and the connection keeps serving; end of input ends the
//! session. The transport is any line stream: a Unix socket or stdio.

use super::{to_hex, KmsError, KmsNetwork};
use serde::Deserialize;
use serde_json::json;
use std::io::{BufRead, Write};

/// Wire requests, tagged by `cmd`.
#[derive(Debug, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    /// Store levels for a pair: bottleneck availability along its route.
    Status { node: String, peer: String },
    /// Draw a fresh key for a pair; the peer collects it by id.
    GetKey {
        node: String,
        peer: String,
        size_bits: u64,
    },
    /// Collect a previously drawn key by id.
    GetKeyWithId {
        node: String,
        peer: String,
        key_id: String,
    },
}

fn error_code(e: &KmsError) -> &'static str {
    match e {
        KmsError::Depleted { .. } => "DEPLETED",
        KmsError::UnknownNode { .. } => "UNKNOWN_NODE",
        KmsError::UnknownKeyId { .. } | KmsError::BadRequest { .. } => "BAD_REQUEST",
    }
}

fn error_response(e: &KmsError) -> serde_json::Value {
    json!({"ok": false, "error": error_code(e), "message": e.to_string()})
}

/// Executes one parsed request against the network.
pub fn handle(net: &mut KmsNetwork, request: &Request) -> serde_json::Value {
    let result = match request {
        Request::Status { node, peer } => net
            .bottleneck_available(node, peer)
            .and_then(|available| {
                let reserved = net.bottleneck_reserved(node, peer)?;
                let route = net.route(node, peer)?;
                Ok(json!({
                    "ok": true,
                    "node": node,
                    "peer": peer,
                    "available_bits": available,
                    "reserved_bits": reserved,
                    "hops": route.len() - 1,
                }))
            }),
        Request::GetKey {
            node,
            peer,
            size_bits,
        } => net.request_key_pending(node, peer, *size_bits).map(|d| {
            json!({
                "ok": true,
                "key_id": d.ticket.key_id,
                "size_bits": d.ticket.size_bits,
                "material_hex": to_hex(&d.material),
            })
        }),
        Request::GetKeyWithId {
            node,
            peer,
            key_id,
        } => net.collect_key(node, peer, key_id).map(|(ticket, material)| {
            json!({
                "ok": true,
                "key_id": ticket.key_id,
                "size_bits": ticket.size_bits,
                "material_hex": to_hex(&material),
            })
        }),
    };
    result.unwrap_or_else(|e| error_response(&e))
}

/// Serves requests line by line until the reader runs dry.
pub fn serve<R: BufRead, W: Write>(
    net: &mut KmsNetwork,
    reader: R,
    mut writer: W,
) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(request) => handle(net, &request),
            Err(e) => error_response(&KmsError::BadRequest {
                detail: format!("unparseable request: {e}"),
            }),
        };
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}
