use stoqpimc_cli::{run_from, threads_from_env};

fn main() {
    match threads_from_env() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                eprintln!("stoqpimc: cannot start {n} workers: {e}");
                std::process::exit(1);
            }
        }
        Ok(None) => {}
        Err(f) => {
            eprintln!("stoqpimc: {}", f.message);
            std::process::exit(f.code);
        }
    }
    std::process::exit(run_from(std::env::args_os()));
}
