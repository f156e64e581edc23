#pragma once

#include "grimrepr/mlp.hpp"
#include "grimrepr/tensor.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

// On-disk format shared by every persisted artefact:
//
//   <base>.manifest  text; first line "grimrepr-checkpoint 1", then
//                    "kind <name>", "meta <key> <value>" and
//                    "tensor <name> <dim>..." lines
//   <base>.bin       the tensors' values as little-endian IEEE-754 doubles,
//                    concatenated in manifest order
//
// Reals stored in meta lines use hexadecimal float notation so they
// round-trip exactly.

namespace grimrepr {

struct Checkpoint {
    std::string kind;
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    void set(const std::string& key, const std::string& value);
    void set_real(const std::string& key, double value);
    std::optional<std::string> get(const std::string& key) const;
    std::string require(const std::string& key) const;
    double require_real(const std::string& key) const;

    void add_tensor(const std::string& name, Tensor value);
    const Tensor& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
};

std::filesystem::path manifest_path(const std::filesystem::path& base);
std::filesystem::path blob_path(const std::filesystem::path& base);
bool checkpoint_exists(const std::filesystem::path& base);

/// Refuses to replace an existing checkpoint unless `overwrite` is set.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& base, bool overwrite = false);
Checkpoint load_checkpoint(const std::filesystem::path& base);

std::string format_real(double v);
double parse_real(const std::string& s);

/// Store an Mlp under `prefix` (architecture in meta, parameters as tensors).
void add_network(Checkpoint& ckpt, const std::string& prefix, const Mlp& net);
Mlp read_network(const Checkpoint& ckpt, const std::string& prefix);

} // namespace grimrepr
