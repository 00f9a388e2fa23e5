fn main() {
    std::process::exit(musechat_cli::main_with_args(std::env::args_os()));
}
