//! Test simulator speaking the sceno subprocess protocol.
//!
//! Usage: `sceno-mock-sim <mode> [arg]`
//!
//! * `echo`: rho = theta[0]
//! * `physical`: rho = physical[0]
//! * `fail`: error response when theta[0] > 0.5, otherwise echo
//! * `shuffle [seed]`: echo, answering each burst of requests in random order
//! * `exit-after <n>`: echo n requests, then exit with status 3
//! * `garbage`: answer with a line that is not JSON
//! * `wrong-id`: answer with an id nobody asked for
//! * `sleep <seconds>`: wait before each answer
//! * `linear-glitch`: rho = sum of theta, plus 50 when theta[0] < 0.01

use std::io::{self, BufRead, Write};
use std::sync::mpsc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn reply(req: &Value, mode: &str) -> String {
    let id = req["id"].as_u64().unwrap_or(0);
    let theta: Vec<f64> = req["theta"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default();
    let first = theta.first().copied().unwrap_or(0.0);
    let v = match mode {
        "physical" => match req["physical"].as_array().and_then(|a| a.first()).and_then(Value::as_f64) {
            Some(p) => json!({"id": id, "rho": p}),
            None => json!({"id": id, "error": "request carried no physical values"}),
        },
        "fail" if first > 0.5 => json!({"id": id, "error": format!("collision model diverged at {first}")}),
        "garbage" => return "this is not json".to_string(),
        "wrong-id" => json!({"id": id + 1_000_000, "rho": first}),
        "linear-glitch" => {
            let s: f64 = theta.iter().sum();
            json!({"id": id, "rho": if first < 0.01 { s + 50.0 } else { s }})
        }
        _ => json!({"id": id, "rho": first}),
    };
    v.to_string()
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().cloned().unwrap_or_else(|| "echo".into());
    let arg = args.get(1).cloned();

    let (tx, rx) = mpsc::channel::<String>();
    std::thread::spawn(move || {
        for line in io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });

    let mut out = io::stdout().lock();
    let mut answered = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(arg.as_deref().and_then(|a| a.parse().ok()).unwrap_or(0));
    while let Ok(first) = rx.recv() {
        let mut burst = vec![first];
        if mode == "shuffle" {
            while let Ok(more) = rx.recv_timeout(Duration::from_millis(50)) {
                burst.push(more);
            }
            burst.shuffle(&mut rng);
        }
        for line in burst {
            let req: Value = match serde_json::from_str(&line) {
                Ok(v) => v,
                Err(_) => continue,
            };
            if mode == "exit-after" {
                let limit: u64 = arg.as_deref().and_then(|a| a.parse().ok()).unwrap_or(1);
                if answered >= limit {
                    std::process::exit(3);
                }
            }
            if mode == "sleep" {
                let secs: f64 = arg.as_deref().and_then(|a| a.parse().ok()).unwrap_or(1.0);
                std::thread::sleep(Duration::from_secs_f64(secs));
            }
            let _ = writeln!(out, "{}", reply(&req, &mode));
            answered += 1;
        }
        let _ = out.flush();
    }
}
