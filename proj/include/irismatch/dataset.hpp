#pragma once

// Identity-grouped image collections, pair enumeration, and the on-disk
// dataset layout (a manifest plus one file per normalized iris).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "irismatch/image.hpp"
#include "irismatch/image_io.hpp"

namespace irismatch {

struct IdentityTuple {
  std::string id;
  std::vector<std::size_t> images;  // indices into IdentityStore::images
};

/// Images grouped by identity. Images are stored once; tuples index them.
struct IdentityStore {
  std::vector<NormalizedIris> images;
  std::vector<IdentityTuple> tuples;

  void add_identity(std::string id, std::vector<NormalizedIris> imgs) {
    IdentityTuple t{std::move(id), {}};
    for (auto& img : imgs) {
      t.images.push_back(images.size());
      images.push_back(std::move(img));
    }
    tuples.push_back(std::move(t));
  }

  std::size_t identity_count() const { return tuples.size(); }

  /// Identity (tuple index) of every image.
  std::vector<std::size_t> identity_of_images() const {
    std::vector<std::size_t> owner(images.size(), tuples.size());
    for (std::size_t t = 0; t < tuples.size(); ++t) {
      for (std::size_t i : tuples[t].images) owner.at(i) = t;
    }
    return owner;
  }

  void validate() const {
    std::set<std::string> ids;
    std::vector<bool> seen(images.size(), false);
    for (const auto& t : tuples) {
      if (t.images.empty()) throw std::invalid_argument("identity '" + t.id + "' has no images");
      if (!ids.insert(t.id).second) throw std::invalid_argument("duplicate identity '" + t.id + "'");
      for (std::size_t i : t.images) {
        if (i >= images.size()) throw std::invalid_argument("identity '" + t.id + "' references a missing image");
        if (seen[i]) throw std::invalid_argument("image referenced by two tuples");
        seen[i] = true;
      }
    }
    for (std::size_t i = 1; i < images.size(); ++i) {
      if (images[i].height != images[0].height || images[i].width != images[0].width) {
        throw std::invalid_argument("images in a store must share one geometry");
      }
    }
  }
};

/// Unordered image pair, stored with first < second.
struct ImagePair {
  std::size_t first = 0;
  std::size_t second = 0;
  friend bool operator==(const ImagePair&, const ImagePair&) = default;
  friend auto operator<=>(const ImagePair&, const ImagePair&) = default;
};

struct PairSet {
  std::vector<ImagePair> authentic;
  std::vector<ImagePair> imposter;

  std::size_t positives() const { return authentic.size(); }
};

/// Every unordered pair of distinct images, split by identity.
inline PairSet enumerate_pairs(const IdentityStore& store) {
  if (store.identity_count() < 2) {
    throw std::invalid_argument("enumerate_pairs: at least 2 identities are needed to form imposter pairs");
  }
  store.validate();
  const auto owner = store.identity_of_images();
  std::vector<std::size_t> members;
  for (const auto& t : store.tuples) members.insert(members.end(), t.images.begin(), t.images.end());
  std::sort(members.begin(), members.end());
  PairSet out;
  for (std::size_t i = 0; i < members.size(); ++i) {
    for (std::size_t j = i + 1; j < members.size(); ++j) {
      const ImagePair p{members[i], members[j]};
      (owner[p.first] == owner[p.second] ? out.authentic : out.imposter).push_back(p);
    }
  }
  return out;
}

/// Store restricted to the given identities (tuple indices), images copied.
inline IdentityStore subset_identities(const IdentityStore& store, const std::vector<std::size_t>& identities) {
  IdentityStore out;
  for (std::size_t t : identities) {
    std::vector<NormalizedIris> imgs;
    for (std::size_t i : store.tuples.at(t).images) imgs.push_back(store.images[i]);
    out.add_identity(store.tuples[t].id, std::move(imgs));
  }
  return out;
}

// Manifest: first line "irismatch-manifest 1", then one line per image
// "<identity>\t<path relative to the manifest directory>". Identities appear
// in first-seen order.
inline constexpr const char* kManifestName = "manifest.txt";
inline constexpr const char* kManifestHeader = "irismatch-manifest 1";

inline void write_manifest(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& rows) {
  out << kManifestHeader << '\n';
  for (const auto& [id, path] : rows) out << id << '\t' << path << '\n';
}

inline std::vector<std::pair<std::string, std::string>> read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw FormatError("manifest: missing header line");
  std::vector<std::pair<std::string, std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected '<identity>\\t<path>'");
    }
    rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return rows;
}

/// Writes `identity_<k>/img_<n>.iris` files and the manifest under `dir`.
inline void save_store(const IdentityStore& store, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::pair<std::string, std::string>> rows;
  for (std::size_t t = 0; t < store.tuples.size(); ++t) {
    const auto& tuple = store.tuples[t];
    const std::string sub = "identity_" + std::to_string(t);
    fs::create_directories(dir / sub);
    for (std::size_t n = 0; n < tuple.images.size(); ++n) {
      const std::string rel = sub + "/img_" + std::to_string(n) + ".iris";
      save_normalized_iris(store.images[tuple.images[n]], dir / rel);
      rows.emplace_back(tuple.id, rel);
    }
  }
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  write_manifest(out, rows);
}

/// Loads a dataset from a manifest file or a directory containing one.
inline IdentityStore load_store(const std::filesystem::path& where) {
  namespace fs = std::filesystem;
  const fs::path manifest = fs::is_directory(where) ? where / kManifestName : where;
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot open manifest " + manifest.string());
  const auto rows = read_manifest(in);
  IdentityStore store;
  std::vector<std::string> order;
  std::vector<std::vector<NormalizedIris>> grouped;
  for (const auto& [id, rel] : rows) {
    auto it = std::find(order.begin(), order.end(), id);
    if (it == order.end()) {
      order.push_back(id);
      grouped.emplace_back();
      it = order.end() - 1;
    }
    grouped[static_cast<std::size_t>(it - order.begin())].push_back(
        load_normalized_iris(manifest.parent_path() / rel));
  }
  for (std::size_t k = 0; k < order.size(); ++k) store.add_identity(order[k], std::move(grouped[k]));
  try {
    store.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  return store;
}

}  // namespace irismatch
