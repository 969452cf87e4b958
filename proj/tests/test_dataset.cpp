#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "lostnet/dataset.hpp"

using namespace lostnet;
namespace fs = std::filesystem;

namespace {

Manifest class_sizes(const std::vector<std::size_t>& sizes) {
  Manifest m;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    m.classes.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < sizes[c]; ++i) m.entries.push_back({m.classes[c] + "/" + std::to_string(i), c});
  }
  return m;
}

std::size_t count_label(const Manifest& m, std::size_t c) {
  return static_cast<std::size_t>(
      std::count_if(m.entries.begin(), m.entries.end(), [&](const ManifestEntry& e) { return e.label == c; }));
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("lostnet_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Split, TenEntriesGiveSevenThree) {
  const auto [tr, va] = split_dataset(class_sizes({10}), 1);
  EXPECT_EQ(tr.entries.size(), 7u);
  EXPECT_EQ(va.entries.size(), 3u);
}

TEST(Split, BagSizedClassRoundsToNearest) {
  const auto [tr, va] = split_dataset(class_sizes({1036, 10}), 1);
  EXPECT_EQ(count_label(tr, 0), 725u);
  EXPECT_EQ(count_label(va, 0), 311u);
}

TEST(Split, TrainShareKeepsBothSides) {
  EXPECT_EQ(train_share(2), 1u);
  EXPECT_EQ(train_share(3), 2u);
  EXPECT_EQ(train_share(5), 4u);  // 3.5 rounds up
  for (std::size_t n = 2; n < 300; ++n) {
    const auto t = train_share(n);
    EXPECT_GE(t, 1u);
    EXPECT_LE(t, n - 1);
  }
}

TEST(Split, DeterministicDisjointExhaustive) {
  const auto m = class_sizes({12, 7, 30, 2});
  const auto a = split_dataset(m, 99), b = split_dataset(m, 99);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  std::set<std::string> seen;
  for (const auto& e : a.first.entries) EXPECT_TRUE(seen.insert(e.path).second);
  for (const auto& e : a.second.entries) EXPECT_TRUE(seen.insert(e.path).second);
  EXPECT_EQ(seen.size(), m.entries.size());
  const auto c = split_dataset(m, 100);
  EXPECT_NE(a.first, c.first);
}

TEST(Split, RejectsClassWithOneEntryByName) {
  auto m = class_sizes({5, 1});
  try {
    split_dataset(m, 1);
    FAIL() << "expected rejection";
  } catch (const ManifestError& e) {
    EXPECT_NE(std::string(e.what()).find("'c1'"), std::string::npos);
  }
}

TEST(Manifest, ValidationRejectsBadEntries) {
  auto m = class_sizes({3});
  m.entries.push_back({"c0/0", 0});
  EXPECT_THROW(validate_manifest(m), ManifestError);
  auto n = class_sizes({3});
  n.entries[0].label = 5;
  EXPECT_THROW(validate_manifest(n), ManifestError);
}

TEST(Manifest, RoundTripThroughFiles) {
  TempDir dir("manifest");
  auto m = class_sizes({3, 2});
  m.root = dir.path;
  write_manifest(m, dir.path);
  const auto back = read_manifest(dir.path / "manifest.txt");
  EXPECT_EQ(back, m);
}

TEST(Manifest, ReportsLineOfMalformedEntry) {
  TempDir dir("badmanifest");
  std::ofstream(dir.path / "classes.txt") << "a\nb\n";
  std::ofstream(dir.path / "manifest.txt") << kManifestHeader << "\n0\tx.png\nnot-a-number\ty.png\n";
  try {
    read_manifest(dir.path / "manifest.txt");
    FAIL() << "expected rejection";
  } catch (const ManifestError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  std::ofstream(dir.path / "manifest.txt") << "wrong header\n";
  EXPECT_THROW(read_manifest(dir.path / "manifest.txt"), ManifestError);
}

TEST(Manifest, DefaultClassesInOrder) {
  const auto& c = default_classes();
  ASSERT_EQ(c.size(), 10u);
  EXPECT_EQ(c.front(), "bag");
  EXPECT_EQ(c[6], "Phone");
  EXPECT_EQ(c.back(), "vacuumcup");
}

TEST(Corpus, WrittenCorpusLoadsLikeInMemory) {
  TempDir dir("corpus");
  const auto m = write_synthetic_corpus(dir.path, 3, 5, 48);
  EXPECT_EQ(m.entries.size(), 30u);
  const auto from_disk = load_dataset(read_manifest(dir.path / "manifest.txt"), 32);
  const auto in_mem = synthetic_dataset(3, 5, 32, 48);
  ASSERT_EQ(from_disk.size(), in_mem.size());
  EXPECT_EQ(from_disk.labels, in_mem.labels);
  for (std::size_t i = 0; i < in_mem.size(); ++i) {
    EXPECT_EQ(from_disk.images[i].shape(), Shape(1, 3, 32, 32));
    EXPECT_TRUE(std::equal(from_disk.images[i].data(), from_disk.images[i].data() + from_disk.images[i].size(),
                           in_mem.images[i].data()));
  }
}

TEST(Corpus, UndecodableFileIsNamed) {
  TempDir dir("undecodable");
  std::ofstream(dir.path / "classes.txt") << "a\n";
  std::ofstream(dir.path / "junk.png") << "not an image";
  std::ofstream(dir.path / "manifest.txt") << kManifestHeader << "\n0\tjunk.png\n";
  try {
    load_dataset(read_manifest(dir.path / "manifest.txt"), 32);
    FAIL() << "expected rejection";
  } catch (const ImageDecodeError& e) {
    EXPECT_NE(std::string(e.what()).find("junk.png"), std::string::npos);
  }
}

TEST(Corpus, BatchStacksSamples) {
  const auto d = synthetic_dataset(2, 1, 16, 32);
  const std::vector<std::size_t> idx{3, 0};
  const auto b = d.batch(idx);
  EXPECT_EQ(b.shape(), Shape(2, 3, 16, 16));
  EXPECT_EQ(b[0], d.images[3][0]);
  EXPECT_EQ(b[3 * 16 * 16], d.images[0][0]);
  EXPECT_THROW(d.batch({}), std::invalid_argument);
}
