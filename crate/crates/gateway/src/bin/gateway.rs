//! Gateway entry point: HTTP service or terminal chat against one machine.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};

use plcagent::agent::TurnTrace;
use plcagent_gateway::{load_config, serve, Gateway};

#[derive(Debug, Parser)]
#[command(name = "gateway", about = "Natural-language control gateway for a PLC")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the HTTP/JSON API and the operator UI assets.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Chat with the machine from the terminal.
    Chat {
        #[arg(long)]
        config: PathBuf,
    },
}

fn print_trace(trace: &TurnTrace) {
    for step in &trace.steps {
        let outcome = if step.result.ok { "ok" } else { "failed" };
        println!("  [{}] {} {} : {}", outcome, step.call.tool, step.call.arguments, step.result.message);
    }
    println!("{}", trace.final_text);
}

fn chat(gateway: Gateway) -> anyhow::Result<()> {
    let mut conversation = gateway.new_conversation()?;
    println!("Connected to {}. Type a command, or an empty line to quit.", gateway.spec().machine_name);
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        print!("> ");
        std::io::stdout().flush()?;
        let Some(line) = lines.next().transpose()? else { break };
        let line = line.trim();
        if line.is_empty() {
            break;
        }
        print_trace(&conversation.send(gateway.toolbox(), line));
    }
    Ok(())
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    plcagent_gateway::init_tracing();
    match Args::parse().command {
        Command::Serve { config } => {
            let config = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            let listen = config.listen;
            let gateway = tokio::task::spawn_blocking(move || Gateway::start(config)).await??;
            let server = serve(Arc::new(gateway), listen).await?;
            println!("gateway listening on {}", server.url());
            tokio::signal::ctrl_c().await?;
            server.shutdown().await?;
        }
        Command::Chat { config } => {
            let config = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            tokio::task::spawn_blocking(move || chat(Gateway::start(config)?)).await??;
        }
    }
    Ok(())
}
