fn main() {
    tbrl::lab::cli_main();
}
