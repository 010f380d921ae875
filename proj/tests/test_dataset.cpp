#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "irismatch/irismatch.hpp"

using namespace irismatch;

namespace {

IdentityStore uniform_store(std::size_t identities, std::size_t per_identity, std::size_t h = 2, std::size_t w = 3) {
  IdentityStore s;
  for (std::size_t t = 0; t < identities; ++t) {
    std::vector<NormalizedIris> imgs;
    for (std::size_t k = 0; k < per_identity; ++k) imgs.emplace_back(h, w, 0.01 * static_cast<double>(t * per_identity + k));
    s.add_identity("id" + std::to_string(t), std::move(imgs));
  }
  return s;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "irismatch_test_dataset" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(EnumeratePairs, CountsForUniformStore) {
  const PairSet p = enumerate_pairs(uniform_store(224, 5));
  EXPECT_EQ(p.authentic.size(), 2240u);
  EXPECT_EQ(p.imposter.size(), 624400u);
  EXPECT_EQ(p.positives(), 2240u);
}

TEST(EnumeratePairs, MatchesBruteForceOnUnevenStore) {
  IdentityStore s;
  const std::vector<std::size_t> sizes{1, 4, 2, 3};
  for (std::size_t t = 0; t < sizes.size(); ++t) s.add_identity("x" + std::to_string(t), std::vector<NormalizedIris>(sizes[t], NormalizedIris(1, 1)));
  const PairSet p = enumerate_pairs(s);
  const auto owner = s.identity_of_images();
  std::size_t auth = 0, imp = 0;
  for (std::size_t i = 0; i < s.images.size(); ++i)
    for (std::size_t j = i + 1; j < s.images.size(); ++j) (owner[i] == owner[j] ? auth : imp)++;
  EXPECT_EQ(p.authentic.size(), auth);
  EXPECT_EQ(p.imposter.size(), imp);
  std::set<ImagePair> seen;
  for (const auto* list : {&p.authentic, &p.imposter})
    for (const auto& q : *list) {
      EXPECT_LT(q.first, q.second);
      EXPECT_TRUE(seen.insert(q).second);
    }
  for (const auto& q : p.authentic) EXPECT_EQ(owner[q.first], owner[q.second]);
  for (const auto& q : p.imposter) EXPECT_NE(owner[q.first], owner[q.second]);
}

TEST(EnumeratePairs, SingleIdentityThrows) {
  EXPECT_THROW(enumerate_pairs(uniform_store(1, 4)), std::invalid_argument);
}

TEST(IdentityStore, ValidateCatchesBrokenStores) {
  IdentityStore dup = uniform_store(2, 2);
  dup.tuples[1].id = dup.tuples[0].id;
  EXPECT_THROW(dup.validate(), std::invalid_argument);
  IdentityStore shared = uniform_store(2, 2);
  shared.tuples[1].images[0] = 0;
  EXPECT_THROW(shared.validate(), std::invalid_argument);
  IdentityStore mixed = uniform_store(2, 2);
  mixed.images[3] = NormalizedIris(3, 3);
  EXPECT_THROW(mixed.validate(), std::invalid_argument);
}

TEST(IdentityStore, SubsetCopiesSelectedIdentities) {
  const IdentityStore s = uniform_store(4, 3);
  const IdentityStore sub = subset_identities(s, {2, 0});
  ASSERT_EQ(sub.identity_count(), 2u);
  EXPECT_EQ(sub.tuples[0].id, "id2");
  EXPECT_EQ(sub.images[0], s.images[6]);
  EXPECT_EQ(sub.tuples[1].images, (std::vector<std::size_t>{3, 4, 5}));
}

TEST(Manifest, RoundTripsThroughDisk) {
  const IdentityStore s = uniform_store(3, 2, 4, 6);
  const auto dir = fresh_dir("roundtrip");
  save_store(s, dir);
  const IdentityStore back = load_store(dir);
  ASSERT_EQ(back.identity_count(), 3u);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(back.tuples[t].id, s.tuples[t].id);
  ASSERT_EQ(back.images.size(), s.images.size());
  for (std::size_t i = 0; i < s.images.size(); ++i)
    for (std::size_t k = 0; k < s.images[i].pixels.size(); ++k)
      EXPECT_EQ(back.images[i].pixels[k], static_cast<double>(static_cast<float>(s.images[i].pixels[k])));
  EXPECT_EQ(load_store(dir / kManifestName).images.size(), 6u);
}

TEST(Manifest, GroupsInterleavedRowsByIdentity) {
  const auto dir = fresh_dir("interleaved");
  for (const char* f : {"a.iris", "b.iris", "c.iris"}) save_normalized_iris(NormalizedIris(2, 2, 0.5), dir / f);
  std::ofstream(dir / kManifestName) << "irismatch-manifest 1\nbob\ta.iris\nann\tb.iris\nbob\tc.iris\n";
  const IdentityStore s = load_store(dir);
  ASSERT_EQ(s.identity_count(), 2u);
  EXPECT_EQ(s.tuples[0].id, "bob");
  EXPECT_EQ(s.tuples[0].images.size(), 2u);
}

TEST(Manifest, RejectsBadHeaderRowsAndMissingFiles) {
  std::istringstream bad_header("something else\n");
  EXPECT_THROW(read_manifest(bad_header), FormatError);
  std::istringstream no_tab("irismatch-manifest 1\njust-a-name\n");
  EXPECT_THROW(read_manifest(no_tab), FormatError);
  const auto dir = fresh_dir("missing");
  std::ofstream(dir / kManifestName) << "irismatch-manifest 1\nann\tnope.iris\n";
  EXPECT_THROW(load_store(dir), FormatError);
  EXPECT_THROW(load_store(dir / "no_such_dir"), FormatError);
}
