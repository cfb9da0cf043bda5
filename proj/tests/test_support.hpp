#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "memefuse/abduction.hpp"
#include "memefuse/data.hpp"
#include "memefuse/model.hpp"
#include "memefuse/pipeline.hpp"
#include "memefuse/preprocess.hpp"
#include "memefuse/training.hpp"

namespace memefuse::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("memefuse-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ModelConfig tiny_config(int vocab = 32) {
  ModelConfig c;
  c.vocab = vocab;
  return c;
}

/// Fixture memes plus stub captions and template rationales.
struct FixtureWorld {
  Dataset train;
  CaptionCache captions;
  DistillationSet rationales;
  WordTokenizer tokenizer;

  explicit FixtureWorld(std::size_t n, std::uint64_t seed = 7) : train(make_fixture_set(seed, n)) {
    train.split = Split::train;
    caption_dataset(train, "stub", captions);
    ChatClient client(std::make_shared<TemplateTeacher>(), RetryPolicy{}, 1);
    rationales = build_distillation_set(train, captions, "stub", client);
    tokenizer = build_tokenizer({&train}, rationales.records, &captions);
  }

  Learner learner(AblationMode mode = AblationMode::full, std::uint64_t seed = 1,
                  ModelConfig config = tiny_config()) const {
    LearnerOptions opts;
    opts.mode = mode;
    return Learner::create(tokenizer, config, seed, opts, &captions);
  }
};

}  // namespace memefuse::testing
