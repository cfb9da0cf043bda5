#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "memefuse/data.hpp"
#include "memefuse/digest.hpp"
#include "memefuse/errors.hpp"
#include "memefuse/random.hpp"
#include "test_support.hpp"

namespace memefuse {
namespace {

using testing::TempDir;

void write_file(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
}

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Sha256, IncrementalMatchesOneShot) {
  Sha256 h;
  h.update("ab").update("c");
  EXPECT_EQ(h.hex_digest(), sha256_hex("abc"));
}

TEST(Sha256, FieldsAreUnambiguous) {
  Sha256 a, b;
  a.update_field("ab").update_field("c");
  b.update_field("a").update_field("bc");
  EXPECT_NE(a.hex_digest(), b.hex_digest());
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    (void)c;
  }
  EXPECT_NE(Rng(42).next(), c.next());
}

TEST(Rng, UniformInUnitInterval) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(3);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  r.shuffle(v);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
}

TEST(Labels, MergeHarmLabels) {
  EXPECT_EQ(merge_harm_labels("very harmful"), Label::harmful);
  EXPECT_EQ(merge_harm_labels("partially harmful"), Label::harmful);
  EXPECT_EQ(merge_harm_labels("harmful"), Label::harmful);
  EXPECT_EQ(merge_harm_labels("harmless"), Label::harmless);
  EXPECT_EQ(merge_harm_labels("  Very Harmful \n"), Label::harmful);
  EXPECT_THROW(merge_harm_labels("somewhat harmful"), UnknownLabelError);
  EXPECT_THROW(merge_harm_labels(""), UnknownLabelError);
}

TEST(Labels, MergeIsIdempotentOnOutputs) {
  for (const char* raw : {"very harmful", "partially harmful", "harmful", "harmless"}) {
    const Label once = merge_harm_labels(raw);
    EXPECT_EQ(merge_harm_labels(to_string(once)), once);
  }
}

TEST(LoadDataset, ThreeLines) {
  TempDir dir;
  write_file(dir / "d.jsonl",
             "{\"id\":\"a\",\"image_path\":\"a.png\",\"text\":\"one\",\"label\":\"harmful\"}\n"
             "{\"id\":\"b\",\"image_path\":\"b.png\",\"text\":\"two\",\"label\":\"very harmful\"}\n"
             "\n"
             "{\"id\":\"c\",\"image_path\":\"/abs/c.png\",\"text\":\"three\"}\n");
  const Dataset ds = load_dataset(dir / "d.jsonl", Split::test);
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.samples[0].id, "a");
  EXPECT_EQ(ds.samples[1].label, Label::harmful);
  EXPECT_FALSE(ds.samples[2].label.has_value());
  EXPECT_EQ(ds.samples[0].image.path, (dir / "a.png").string());
  EXPECT_EQ(ds.samples[2].image.path, "/abs/c.png");
  EXPECT_EQ(ds.split, Split::test);
}

TEST(LoadDataset, EmptyFile) {
  TempDir dir;
  write_file(dir / "e.jsonl", "");
  EXPECT_EQ(load_dataset(dir / "e.jsonl", Split::train).size(), 0u);
}

TEST(LoadDataset, DuplicateId) {
  TempDir dir;
  write_file(dir / "d.jsonl",
             "{\"id\":\"m1\",\"image_path\":\"a.png\",\"text\":\"one\"}\n"
             "{\"id\":\"m1\",\"image_path\":\"b.png\",\"text\":\"two\"}\n");
  EXPECT_THROW(load_dataset(dir / "d.jsonl", Split::train), IntegrityError);
}

TEST(LoadDataset, MalformedLineNamesLine) {
  TempDir dir;
  write_file(dir / "d.jsonl",
             "{\"id\":\"m1\",\"image_path\":\"a.png\",\"text\":\"one\"}\n"
             "{not json\n");
  try {
    load_dataset(dir / "d.jsonl", Split::train);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, MissingKeyIsParseError) {
  TempDir dir;
  write_file(dir / "d.jsonl", "{\"id\":\"m1\",\"text\":\"one\"}\n");
  EXPECT_THROW(load_dataset(dir / "d.jsonl", Split::train), ParseError);
}

TEST(LoadDataset, UnknownLabelRejected) {
  TempDir dir;
  write_file(dir / "d.jsonl", "{\"id\":\"m1\",\"image_path\":\"a.png\",\"text\":\"one\",\"label\":\"meh\"}\n");
  EXPECT_THROW(load_dataset(dir / "d.jsonl", Split::train), UnknownLabelError);
}

TEST(LoadDataset, UnknownKeysWarn) {
  TempDir dir;
  write_file(dir / "d.jsonl", "{\"id\":\"m1\",\"image_path\":\"a.png\",\"text\":\"one\",\"source\":\"x\"}\n");
  std::ostringstream warn;
  const Dataset ds = load_dataset(dir / "d.jsonl", Split::train, &warn);
  EXPECT_EQ(ds.size(), 1u);
  EXPECT_NE(warn.str().find("source"), std::string::npos);
}

TEST(LoadDataset, MissingFileIsFileError) {
  EXPECT_THROW(load_dataset("/nonexistent/memes.jsonl", Split::train), FileError);
}

TEST(Stats, FixtureCounts) {
  const Dataset ds = make_fixture_set(7, 4);
  EXPECT_EQ(compute_stats(ds), (DatasetStats{2, 2}));
}

TEST(Stats, RejectsUnlabeled) {
  Dataset ds = make_fixture_set(7, 4);
  ds.samples[1].label.reset();
  EXPECT_THROW(compute_stats(ds), MissingLabelError);
}

TEST(Stats, PermutationInvariant) {
  const Dataset ds = make_fixture_set(11, 40);
  for (std::uint64_t seed = 0; seed < 5; ++seed) EXPECT_EQ(compute_stats(ds.shuffled(seed)), compute_stats(ds));
}

TEST(Fixtures, Deterministic) {
  const Dataset a = make_fixture_set(7, 4), b = make_fixture_set(7, 4);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.digest(), b.digest());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.samples[i].image.load(), b.samples[i].image.load());
}

TEST(Fixtures, SeedSensitive) {
  const Dataset a = make_fixture_set(7, 4), b = make_fixture_set(8, 4);
  std::vector<std::string> ta, tb;
  for (const auto& s : a.samples) ta.push_back(s.text);
  for (const auto& s : b.samples) tb.push_back(s.text);
  EXPECT_NE(ta, tb);
}

TEST(Fixtures, Balanced) { EXPECT_EQ(compute_stats(make_fixture_set(7, 100)), (DatasetStats{50, 50})); }

TEST(Fixtures, RejectsOddOrTiny) {
  EXPECT_THROW(make_fixture_set(7, 3), ArgumentError);
  EXPECT_THROW(make_fixture_set(7, 0), ArgumentError);
}

TEST(Fixtures, ValidDataset) {
  const Dataset ds = make_fixture_set(5, 20);
  EXPECT_NO_THROW(ds.validate());
  for (const auto& s : ds.samples) EXPECT_FALSE(s.text.empty());
}

TEST(RoundTrip, SaveThenLoad) {
  TempDir dir;
  Dataset ds = make_fixture_set(9, 6);
  save_dataset(ds, dir / "ds.jsonl", dir / "images");
  const Dataset back = load_dataset(dir / "ds.jsonl", ds.split);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.samples[i].id, ds.samples[i].id);
    EXPECT_EQ(back.samples[i].text, ds.samples[i].text);
    EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
    EXPECT_EQ(back.samples[i].image.load(), ds.samples[i].image.load());
  }
  // A second save of the loaded set reproduces the file byte for byte.
  save_dataset(back, dir / "again.jsonl");
  EXPECT_EQ(sha256_file(dir / "again.jsonl"), sha256_file(dir / "ds.jsonl"));
}

TEST(Dataset, ShuffledIsDeterministicPermutation) {
  const Dataset ds = make_fixture_set(1, 10);
  const Dataset a = ds.shuffled(3), b = ds.shuffled(3);
  EXPECT_EQ(a, b);
  auto ids = [](const Dataset& d) {
    std::vector<std::string> v;
    for (const auto& s : d.samples) v.push_back(s.id);
    std::sort(v.begin(), v.end());
    return v;
  };
  EXPECT_EQ(ids(a), ids(ds));
}

TEST(Dataset, AtFindsById) {
  const Dataset ds = make_fixture_set(1, 4);
  EXPECT_EQ(ds.at("m3").id, "m3");
  EXPECT_THROW(ds.at("nope"), ArgumentError);
}

}  // namespace
}  // namespace memefuse
