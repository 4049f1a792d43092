#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace brcsgan {

// Reserved token ids; fixed across every corpus and checkpoint.
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kUnk = 3;
constexpr int kNumReserved = 4;

class Vocab {
 public:
  Vocab() {
    for (const char* tok : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(tok);
  }

  int add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    ids_[token] = id;
    tokens_.push_back(token);
    return id;
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  // Unknown tokens map to <unk>.
  int id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token) != 0; }

  const std::string& token_of(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Vocab: id out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("Vocab: cannot write " + path);
    for (const auto& t : tokens_) os << t << "\n";
  }

  static Vocab load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("Vocab: cannot open " + path);
    Vocab v;
    std::string line;
    int idx = 0;
    while (std::getline(is, line)) {
      if (idx < kNumReserved) {
        if (line != v.tokens_[static_cast<std::size_t>(idx)])
          throw std::runtime_error("Vocab: reserved token mismatch in " + path);
      } else {
        v.add(line);
      }
      ++idx;
    }
    if (idx < kNumReserved) throw std::runtime_error("Vocab: file too short: " + path);
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace brcsgan
