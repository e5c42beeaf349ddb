fn main() {
    // Die quietly when a downstream pipe closes (`skeletag tag … | head`),
    // like other line-oriented tools, instead of panicking on EPIPE.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(skeletag::cli::run(std::env::args_os()));
}
