fn main() {
    println!("wakeforge");
}
