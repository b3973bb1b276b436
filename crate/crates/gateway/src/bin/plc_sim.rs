//! Simulated PLC serving the newline-delimited JSON wire protocol.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use serde_json::Value;

use plcagent::sim::serve;
use plcagent::{load_machine_spec_file, AddressSpace};

#[derive(Debug, Parser)]
#[command(name = "plc-sim", about = "Simulated PLC address space over TCP")]
struct Args {
    /// Machine configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Address to listen on, e.g. 127.0.0.1:4840.
    #[arg(long, default_value = "127.0.0.1:4840")]
    listen: String,
    /// JSON object of start values by parameter name.
    #[arg(long)]
    initial: Option<PathBuf>,
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> anyhow::Result<()> {
    plcagent_gateway::init_tracing();
    let args = Args::parse();
    let spec = load_machine_spec_file(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    let initial: BTreeMap<String, Value> = match &args.initial {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => BTreeMap::new(),
    };
    let space = AddressSpace::create(&spec, &initial)?;
    let server = serve(space, args.listen.as_str())?;
    println!("{} serving {} nodes at {}", spec.machine_name, spec.nodes().len(), server.endpoint());
    tokio::signal::ctrl_c().await?;
    server.shutdown();
    Ok(())
}
