fn main() {
    println!("scalesplit");
}
