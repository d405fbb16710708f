fn main() {
    println!("hbench");
}
