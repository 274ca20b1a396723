#include "knncross/corpus.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include "knncross/errors.hpp"

namespace knncross {

namespace {

std::vector<int> parse_tokens(const std::string& field,
                              const std::string& origin, std::size_t line_no) {
  std::vector<int> out;
  std::istringstream ss(field);
  std::string word;
  while (ss >> word) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(word, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != word.size())
      throw DataError(origin + " line " + std::to_string(line_no) +
                      ": bad token '" + word + "'");
    if (v > unsigned(std::numeric_limits<int>::max()))
      throw DataError(origin + " line " + std::to_string(line_no) +
                      ": token id " + word + " out of range");
    out.push_back(int(v));
  }
  return out;
}

}  // namespace

Corpus parse_corpus(std::istream& in, const std::string& origin) {
  Corpus out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError(origin + " line " + std::to_string(line_no) +
                      ": missing tab between input and target");
    Example ex;
    ex.input = parse_tokens(line.substr(0, tab), origin, line_no);
    ex.target = parse_tokens(line.substr(tab + 1), origin, line_no);
    out.push_back(std::move(ex));
  }
  return out;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("corpus: cannot open " + path.string());
  return parse_corpus(in, path.string());
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("corpus: cannot write " + path.string());
  for (const Example& ex : corpus) {
    for (std::size_t i = 0; i < ex.input.size(); ++i)
      os << (i ? " " : "") << ex.input[i];
    os << '\t';
    for (std::size_t i = 0; i < ex.target.size(); ++i)
      os << (i ? " " : "") << ex.target[i];
    os << '\n';
  }
  if (!os) throw IoError("corpus: write failed for " + path.string());
}

}  // namespace knncross
