// Writes a checkpoint with deterministic hash-seeded weights.

#include <iostream>

#include <CLI11.hpp>

#include "contrans/synthetic.hpp"
#include "contrans/tokenizer.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Write a synthetic GPT-NeoX checkpoint", "contrans-synth"};
    std::string dir, tokenizer = "data/tokenizer/tokenizer.json";
    std::size_t layers = 4, width = 64, heads = 4;
    std::string salt;
    bool pythia = false;
    app.add_option("dir", dir, "output directory")->required();
    app.add_option("--tokenizer", tokenizer, "tokenizer.json to embed");
    app.add_option("--layers", layers, "number of blocks");
    app.add_option("--width", width, "hidden width");
    app.add_option("--heads", heads, "attention heads");
    app.add_option("--salt", salt, "weight seed salt (empty = reference weights)");
    app.add_flag("--pythia70m", pythia, "use the 70M architecture");
    CLI11_PARSE(app, argc, argv);
    try {
        const auto tok = contrans::Tokenizer::from_file(tokenizer);
        auto cfg = pythia ? contrans::synthetic::pythia70m_config()
                          : contrans::synthetic::tiny_config(tok.vocab_size(), layers, width, heads);
        if (pythia) cfg.vocab_size = tok.vocab_size();
        contrans::synthetic::write_checkpoint(dir, cfg, tokenizer, salt);
        std::cout << dir << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
