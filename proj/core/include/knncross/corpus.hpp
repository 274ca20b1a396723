#ifndef KNNCROSS_CORPUS_HPP
#define KNNCROSS_CORPUS_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace knncross {

struct Example {
  std::vector<int> input;
  std::vector<int> target;
};

using Corpus = std::vector<Example>;

// One example per line: input tokens, a tab, target tokens, each side
// space-separated unsigned integers. Blank lines are skipped.
Corpus parse_corpus(std::istream& in, const std::string& origin);
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

}  // namespace knncross

#endif
