use clap::Parser;

fn main() {
    let cli = coco_cli::Cli::parse();
    if let Err(e) = coco_cli::run(&cli) {
        eprintln!("coco: {e}");
        std::process::exit(e.exit_code());
    }
}
