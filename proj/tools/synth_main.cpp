// memesieve-synth: writes a labelled synthetic meme corpus, an optional
// hateful reference set and a matching config file.
#include <CLI11.hpp>

#include <iostream>

#include "memesieve/common.hpp"
#include "memesieve/synthetic.hpp"

namespace fs = std::filesystem;
using namespace memesieve;

int main(int argc, char** argv) {
  CLI::App app{"memesieve-synth: synthetic memes for smoke runs and tests"};
  std::string out;
  int count = 100;
  int reference_count = 0;
  std::uint64_t seed = 0;
  std::string prefix = "meme";
  std::string manifest = "corpus.jsonl";
  SyntheticOptions opts;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--count", count, "Number of corpus memes (labels alternate)")->check(CLI::NonNegativeNumber);
  app.add_option("--reference-count", reference_count, "Number of hateful reference memes (reference.jsonl)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--seed", seed, "Root seed");
  app.add_option("--prefix", prefix, "Meme id prefix");
  app.add_option("--manifest", manifest, "Corpus manifest file name");
  app.add_option("--height", opts.height, "Image height")->check(CLI::PositiveNumber);
  app.add_option("--width", opts.width, "Image width")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path dir(out);
    const auto corpus = write_synthetic_corpus(dir, make_synthetic_corpus(count, seed, prefix, opts), manifest);
    std::cout << corpus.string() << "\n";
    if (reference_count > 0) {
      const auto refs = make_synthetic_corpus(reference_count, derive_seed(seed, "reference"), prefix + "-ref", opts, 1);
      std::cout << write_synthetic_corpus(dir, refs, "reference.jsonl").string() << "\n";
    }
    std::string yaml = "filters:\n  lexicon: [";
    const auto& lex = synthetic_lexicon();
    for (std::size_t i = 0; i < lex.size(); ++i) yaml += (i ? ", " : "") + lex[i];
    yaml += "]\n";
    write_text_file(dir / "config.yaml", yaml);
    std::cout << (dir / "config.yaml").string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
