#pragma once

// Named-tensor container.
//
//   SR2SEG-CHECKPOINT 1\n
//   meta <key> <value>\n                          (zero or more, value runs to end of line)
//   tensor <name> <dtype> <d0xd1x...> <offset> <nbytes>\n   (one per tensor)
//   end\n
//   <payload>
//
// dtype is f32, f64 or u8; payload values are little-endian; offsets are
// relative to the first payload byte.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr2seg/tensor.hpp"

namespace sr2seg {

inline constexpr const char* kCheckpointMagic = "SR2SEG-CHECKPOINT 1";

class Checkpoint {
 public:
  struct Entry {
    std::string dtype;
    Shape shape;
    std::vector<std::uint8_t> bytes;
  };

  void set_meta(const std::string& key, const std::string& value) {
    if (key.find_first_of(" \t\n") != std::string::npos || value.find('\n') != std::string::npos)
      throw std::invalid_argument("checkpoint meta key/value contains whitespace or newline: " + key);
    meta_[key] = value;
  }
  const std::string& meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw std::runtime_error("checkpoint has no meta key " + key);
    return it->second;
  }
  bool has_meta(const std::string& key) const { return meta_.count(key) != 0; }
  const std::map<std::string, std::string>& all_meta() const { return meta_; }

  template <class T>
  void put(const std::string& name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    Entry e;
    e.dtype = std::is_same_v<T, float> ? "f32" : "f64";
    e.shape = t.shape();
    e.bytes.resize(t.numel() * sizeof(T));
    for (std::size_t i = 0; i < t.numel(); ++i) store_le(t[i], e.bytes.data() + i * sizeof(T));
    put_entry(name, std::move(e));
  }

  void put_text(const std::string& name, const std::string& s) {
    Entry e{"u8", Shape{s.size()}, std::vector<std::uint8_t>(s.begin(), s.end())};
    put_entry(name, std::move(e));
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::runtime_error("checkpoint has no tensor " + name);
    return it->second;
  }
  std::vector<std::string> names() const { return order_; }

  template <class T>
  Tensor<T> get(const std::string& name) const {
    const Entry& e = entry(name);
    Tensor<T> t(e.shape);
    if (e.dtype == "f32") {
      for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(load_le<float>(e.bytes.data() + i * 4));
    } else if (e.dtype == "f64") {
      for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(load_le<double>(e.bytes.data() + i * 8));
    } else {
      throw std::runtime_error("tensor " + name + " has non-float dtype " + e.dtype);
    }
    return t;
  }

  std::string get_text(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype != "u8") throw std::runtime_error("tensor " + name + " is not text");
    return std::string(e.bytes.begin(), e.bytes.end());
  }

  void save(const std::filesystem::path& path) const {
    std::ostringstream head;
    head << kCheckpointMagic << '\n';
    for (const auto& [k, v] : meta_) head << "meta " << k << ' ' << v << '\n';
    std::size_t offset = 0;
    for (const auto& name : order_) {
      const Entry& e = entries_.at(name);
      head << "tensor " << name << ' ' << e.dtype << ' ' << shape_str(e.shape) << ' ' << offset << ' '
           << e.bytes.size() << '\n';
      offset += e.bytes.size();
    }
    head << "end\n";
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
      const std::string h = head.str();
      out.write(h.data(), static_cast<std::streamsize>(h.size()));
      for (const auto& name : order_) {
        const auto& b = entries_.at(name).bytes;
        out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
      }
      if (!out) throw std::runtime_error("short write on checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointMagic)
      throw std::runtime_error("not a checkpoint file: " + path.string());
    Checkpoint ck;
    struct Pending {
      std::string name;
      Entry e;
      std::size_t offset, nbytes;
    };
    std::vector<Pending> pending;
    bool ended = false;
    while (std::getline(in, line)) {
      if (line == "end") {
        ended = true;
        break;
      }
      std::istringstream ls(line);
      std::string kind;
      ls >> kind;
      if (kind == "meta") {
        std::string key;
        ls >> key;
        std::string value;
        std::getline(ls, value);
        if (!value.empty() && value[0] == ' ') value.erase(0, 1);
        ck.meta_[key] = value;
      } else if (kind == "tensor") {
        Pending p;
        std::string shape;
        if (!(ls >> p.name >> p.e.dtype >> shape >> p.offset >> p.nbytes))
          throw std::runtime_error("malformed checkpoint index line: " + line);
        p.e.shape = parse_shape(shape);
        const std::size_t width = p.e.dtype == "f64" ? 8 : p.e.dtype == "f32" ? 4 : 1;
        if (shape_numel(p.e.shape) * width != p.nbytes)
          throw std::runtime_error("checkpoint tensor " + p.name + " size does not match its shape");
        pending.push_back(std::move(p));
      } else {
        throw std::runtime_error("unknown checkpoint index line: " + line);
      }
    }
    if (!ended) throw std::runtime_error("checkpoint index not terminated: " + path.string());
    const std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    for (auto& p : pending) {
      if (p.offset + p.nbytes > payload.size())
        throw std::runtime_error("checkpoint payload truncated at tensor " + p.name);
      p.e.bytes.assign(payload.begin() + static_cast<std::ptrdiff_t>(p.offset),
                       payload.begin() + static_cast<std::ptrdiff_t>(p.offset + p.nbytes));
      ck.put_entry(p.name, std::move(p.e));
    }
    return ck;
  }

 private:
  void put_entry(const std::string& name, Entry e) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
      throw std::invalid_argument("bad checkpoint tensor name: '" + name + "'");
    if (!entries_.count(name)) order_.push_back(name);
    entries_[name] = std::move(e);
  }

  static Shape parse_shape(const std::string& s) {
    Shape out;
    std::istringstream ss(s);
    std::string part;
    while (std::getline(ss, part, 'x')) out.push_back(std::stoull(part));
    if (out.empty()) throw std::runtime_error("empty shape in checkpoint");
    return out;
  }

  template <class T>
  static void store_le(T v, std::uint8_t* dst) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    const U u = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = static_cast<std::uint8_t>(u >> (8 * i));
  }
  template <class T>
  static T load_le(const std::uint8_t* src) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(src[i]) << (8 * i);
    return std::bit_cast<T>(u);
  }

  std::map<std::string, std::string> meta_;
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
};

}  // namespace sr2seg
