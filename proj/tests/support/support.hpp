#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "botverse/engine.hpp"
#include "botverse/errors.hpp"
#include "botverse/scenario.hpp"

namespace testing {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(BOTVERSE_SOURCE_DIR); }
inline fs::path desk_path() { return source_dir() / "scenarios" / "desk.json"; }

inline botverse::ScenarioConfig desk() { return botverse::load_scenario(desk_path()); }

// Removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("botverse_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A small replay-free population used by engine tests.
inline botverse::json small_scenario_json(int benign = 6, int disinfo = 3, const char* duration = "2h") {
  using botverse::json;
  return json{{"name", "small"},
              {"duration", duration},
              {"start_hour", 9},
              {"attention_sample", 5},
              {"checkpoint_every", 40},
              {"populations",
               json::array({json{{"archetype", "benign"}, {"count", benign}, {"handle_base", "b"}},
                            json{{"archetype", "disinformative"}, {"count", disinfo}, {"handle_base", "d"}}})}};
}

inline botverse::ControlCommand resume_cmd() {
  botverse::ControlCommand c;
  c.kind = botverse::ControlCommand::Kind::resume;
  return c;
}

inline botverse::ControlCommand pause_cmd() {
  botverse::ControlCommand c;
  c.kind = botverse::ControlCommand::Kind::pause;
  return c;
}

}  // namespace testing
