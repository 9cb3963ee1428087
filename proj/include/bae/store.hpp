#pragma once

// Versioned binary container for trained statistics and GP models.
//
// Layout: a text manifest ("BAESTORE <version>", "kind <name>", one
// "meta <key> <value>" line per scalar, one "array <name> <rows> <cols>"
// line per array, then "end"), the arrays as column-major little-endian
// float64 in manifest order, and a 4-byte little-endian CRC-32 of every
// preceding byte.

#include "bae/calibration.hpp"
#include "bae/training.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bae::store {

inline constexpr int kVersion = 1;

struct Container {
    std::string kind;
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, forward::Matrix>> arrays;

    void put(const std::string& key, const std::string& value);
    void put(const std::string& key, double value);
    void put(const std::string& key, long value);
    void put_array(const std::string& name, forward::Matrix value);

    /// Lookups throw StoreError when the entry is missing.
    [[nodiscard]] const std::string& text(std::string_view key) const;
    [[nodiscard]] double real(std::string_view key) const;
    [[nodiscard]] long integer(std::string_view key) const;
    [[nodiscard]] const forward::Matrix& array(std::string_view name) const;
};

[[nodiscard]] std::string serialize(const Container& container);
/// Throws StoreError on bad magic, version mismatch, truncation or checksum failure.
[[nodiscard]] Container deserialize(std::string_view bytes);

void write_container(const std::filesystem::path& path, const Container& container);
[[nodiscard]] Container read_container(const std::filesystem::path& path);

[[nodiscard]] Container pack_stats(const training::StatsStore& store);
[[nodiscard]] training::StatsStore unpack_stats(const Container& container);
void save_stats(const std::filesystem::path& path, const training::StatsStore& store);
[[nodiscard]] training::StatsStore load_stats(const std::filesystem::path& path);

using GpModels = std::vector<std::optional<calibration::GpModel>>;
[[nodiscard]] Container pack_gp_models(const GpModels& models);
[[nodiscard]] GpModels unpack_gp_models(const Container& container);
void save_gp_models(const std::filesystem::path& path, const GpModels& models);
[[nodiscard]] GpModels load_gp_models(const std::filesystem::path& path);

}  // namespace bae::store
