fn main() {
    println!("ballpath");
}
