use std::io::Write;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use nanosat_cli::args::{Cli, Cmd};
use nanosat_cli::serve::{serve, ServeConfig};
use nanosat_cli::{ops, CliError};
use nanosat_core::mission::Mission;

fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Cmd::Run { scenario, out, json } => ops::run(&scenario, out.as_deref(), json),
        Cmd::Report { log, out, json } => ops::report(&log, out.as_deref(), json),
        Cmd::Passgen { scenario, json } => ops::passgen(&scenario, json),
        Cmd::Inject { scenario, file, all_copies, flip_seed, out } => {
            ops::inject(&scenario, &file, all_copies, flip_seed, out.as_deref())
        }
        Cmd::Encode { input, output, quality, lossless } => ops::encode(&input, &output, quality, lossless),
        Cmd::Decode { input, output, segments } => ops::decode(&input, &output, segments),
        Cmd::Serve { scenario, addr, steps_per_tick, tick_ms } => {
            let mission = Mission::new(ops::load_scenario(&scenario)?)?;
            let config = ServeConfig { steps_per_tick, tick: (tick_ms > 0).then(|| Duration::from_millis(tick_ms)) };
            let rt = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
            rt.block_on(serve(mission, addr, config)).map_err(CliError::runtime)?;
            Ok(String::new())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(text) => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("missioncli: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
