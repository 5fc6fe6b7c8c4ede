fn main() {
    unimplemented!("experiment runner built after the core library");
}
