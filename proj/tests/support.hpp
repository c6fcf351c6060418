#pragma once

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "memr/corpus.hpp"

namespace memr::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("memr-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// Three-symbol first-order chain used wherever an exact hand-sized grammar is
// needed.
inline OracleGrammar toy_grammar(std::size_t t_max = 12) {
  return OracleGrammar::first_order({"x", "y", "z"}, {0.5, 0.3, 0.2},
                                    {{0.1, 0.6, 0.3}, {0.5, 0.2, 0.3}, {0.3, 0.3, 0.4}}, {0.2, 0.3, 0.25}, t_max);
}

}  // namespace memr::test
