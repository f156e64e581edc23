#include "grimrepr/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace grimrepr {

namespace fs = std::filesystem;

void Checkpoint::set(const std::string& key, const std::string& value)
{
    if (key.empty() || key.find_first_of(" \t\n") != std::string::npos)
        throw std::invalid_argument("checkpoint meta key '" + key + "' must be a single token");
    if (value.find('\n') != std::string::npos) throw std::invalid_argument("checkpoint meta value contains newline");
    for (auto& [k, v] : meta)
        if (k == key) {
            v = value;
            return;
        }
    meta.emplace_back(key, value);
}

void Checkpoint::set_real(const std::string& key, double value) { set(key, format_real(value)); }

std::optional<std::string> Checkpoint::get(const std::string& key) const
{
    for (const auto& [k, v] : meta)
        if (k == key) return v;
    return std::nullopt;
}

std::string Checkpoint::require(const std::string& key) const
{
    auto v = get(key);
    if (!v) throw std::runtime_error("checkpoint (" + kind + ") missing meta '" + key + "'");
    return *v;
}

double Checkpoint::require_real(const std::string& key) const { return parse_real(require(key)); }

void Checkpoint::add_tensor(const std::string& name, Tensor value)
{
    if (has_tensor(name)) throw std::invalid_argument("duplicate checkpoint tensor '" + name + "'");
    tensors.emplace_back(name, std::move(value));
}

const Tensor& Checkpoint::tensor(const std::string& name) const
{
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw std::runtime_error("checkpoint (" + kind + ") missing tensor '" + name + "'");
}

bool Checkpoint::has_tensor(const std::string& name) const
{
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

fs::path manifest_path(const fs::path& base) { return fs::path(base.string() + ".manifest"); }
fs::path blob_path(const fs::path& base) { return fs::path(base.string() + ".bin"); }
bool checkpoint_exists(const fs::path& base) { return fs::exists(manifest_path(base)); }

namespace {

constexpr const char* kMagic = "grimrepr-checkpoint 1";

void put_le(std::string& out, double v)
{
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_le(const unsigned char* p)
{
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

std::string join_sizes(const std::vector<std::size_t>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<std::size_t> split_sizes(const std::string& s)
{
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<std::size_t>(std::stoull(item)));
    return out;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& base, bool overwrite)
{
    if (!overwrite && checkpoint_exists(base))
        throw std::runtime_error("checkpoint " + base.string() + " already exists");
    if (base.has_parent_path()) fs::create_directories(base.parent_path());

    std::ostringstream manifest;
    manifest << kMagic << "\n";
    manifest << "kind " << ckpt.kind << "\n";
    for (const auto& [k, v] : ckpt.meta) manifest << "meta " << k << " " << v << "\n";
    std::string blob;
    for (const auto& [name, t] : ckpt.tensors) {
        manifest << "tensor " << name;
        if (t.rank() == 0) manifest << " scalar";
        for (std::size_t d : t.shape()) manifest << " " << d;
        manifest << "\n";
        for (double v : t.data()) put_le(blob, v);
    }

    // Blob first, so a present manifest implies a complete pair.
    {
        std::ofstream out(blob_path(base), std::ios::binary | std::ios::trunc);
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw std::runtime_error("failed writing " + blob_path(base).string());
    }
    std::ofstream out(manifest_path(base), std::ios::trunc);
    out << manifest.str();
    if (!out) throw std::runtime_error("failed writing " + manifest_path(base).string());
}

Checkpoint load_checkpoint(const fs::path& base)
{
    std::ifstream in(manifest_path(base));
    if (!in) throw std::runtime_error("cannot open checkpoint " + manifest_path(base).string());
    std::string line;
    std::getline(in, line);
    if (line != kMagic) throw std::runtime_error(manifest_path(base).string() + ": not a checkpoint manifest");

    Checkpoint ckpt;
    std::vector<std::pair<std::string, Shape>> layout;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "kind") {
            ls >> ckpt.kind;
        } else if (tag == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value[0] == ' ') value.erase(0, 1);
            ckpt.meta.emplace_back(key, value);
        } else if (tag == "tensor") {
            std::string name;
            ls >> name;
            Shape shape;
            std::string dim;
            while (ls >> dim)
                if (dim != "scalar") shape.push_back(static_cast<std::size_t>(std::stoull(dim)));
            layout.emplace_back(name, shape);
        } else {
            throw std::runtime_error(manifest_path(base).string() + ": unknown line '" + line + "'");
        }
    }

    std::ifstream bin(blob_path(base), std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open checkpoint blob " + blob_path(base).string());
    std::string bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    std::size_t expected = 0;
    for (const auto& [name, shape] : layout) expected += shape_size(shape) * 8;
    if (bytes.size() != expected)
        throw std::runtime_error(blob_path(base).string() + ": size " + std::to_string(bytes.size()) +
                                 " does not match manifest (" + std::to_string(expected) + ")");
    std::size_t offset = 0;
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    for (auto& [name, shape] : layout) {
        std::vector<double> data(shape_size(shape));
        for (double& v : data) {
            v = get_le(p + offset);
            offset += 8;
        }
        ckpt.tensors.emplace_back(name, Tensor(shape, std::move(data)));
    }
    return ckpt;
}

std::string format_real(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_real(const std::string& s)
{
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("not a real number: '" + s + "'");
    return v;
}

void add_network(Checkpoint& ckpt, const std::string& prefix, const Mlp& net)
{
    ckpt.set(prefix + ".sizes", join_sizes(net.spec().sizes));
    ckpt.set(prefix + ".hidden", to_string(net.spec().hidden));
    ckpt.set(prefix + ".output", to_string(net.spec().output));
    ckpt.set_real(prefix + ".slope", net.spec().slope);
    const auto names = net.param_names();
    for (std::size_t i = 0; i < names.size(); ++i) ckpt.add_tensor(prefix + "." + names[i], net.params()[i]);
}

Mlp read_network(const Checkpoint& ckpt, const std::string& prefix)
{
    MlpSpec spec;
    spec.sizes = split_sizes(ckpt.require(prefix + ".sizes"));
    spec.hidden = activation_from_string(ckpt.require(prefix + ".hidden"));
    spec.output = activation_from_string(ckpt.require(prefix + ".output"));
    spec.slope = ckpt.require_real(prefix + ".slope");
    Mlp net = Mlp::zeros(spec);
    const auto names = net.param_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        const Tensor& t = ckpt.tensor(prefix + "." + names[i]);
        if (t.shape() != net.params()[i].shape())
            throw std::runtime_error("checkpoint tensor " + prefix + "." + names[i] + " has shape " +
                                     shape_string(t.shape()) + ", expected " +
                                     shape_string(net.params()[i].shape()));
        net.params()[i] = t;
    }
    return net;
}

} // namespace grimrepr
