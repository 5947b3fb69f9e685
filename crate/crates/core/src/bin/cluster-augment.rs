fn main() {
    std::process::exit(cluster_augment::cli::main());
}
