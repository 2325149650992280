#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "kgattach/corpus.hpp"

namespace testsupport {

inline std::filesystem::path fixture_dir() {
  return std::filesystem::path(KGATTACH_FIXTURE_DIR);
}

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::atomic<unsigned> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("kgattach_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path file(const std::string& name) const { return path / name; }
};

inline kgattach::corpus::Turn make_turn(const std::string& session_id, int index,
                                        kgattach::corpus::Speaker speaker,
                                        const std::string& text,
                                        std::vector<kgattach::corpus::Triplet> triplets = {}) {
  kgattach::corpus::Turn t;
  t.session_id = session_id;
  t.turn_index = index;
  t.speaker = speaker;
  t.text = text;
  t.triplets = std::move(triplets);
  return t;
}

inline kgattach::corpus::Session make_session(const std::string& session_id,
                                              std::vector<kgattach::corpus::Turn> turns) {
  kgattach::corpus::Session s;
  s.session_id = session_id;
  s.turns = std::move(turns);
  s.subgraph = kgattach::corpus::build_subgraph(s.turns);
  return s;
}

// A small two-speaker session around one fact, used all over the suites.
inline kgattach::corpus::Session got_session(const std::string& session_id = "s1") {
  using kgattach::corpus::Speaker;
  kgattach::corpus::Triplet fact{"GOT", "written_by", "George R.R. Martin"};
  return make_session(session_id,
                      {make_turn(session_id, 0, Speaker::User, "Who wrote GOT?"),
                       make_turn(session_id, 1, Speaker::Assistant,
                                 "GOT was written by George R.R. Martin.", {fact})});
}

}  // namespace testsupport
