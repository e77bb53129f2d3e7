#pragma once

// SPLITEE1 container:
//   8 bytes   magic "SPLITEE1"
//   8 bytes   header length n, little-endian uint64
//   n bytes   UTF-8 JSON header {"format_version", "kind", "meta", "tensors": [{"name","shape","offset","count"}]}
//   payload   float64 values, little-endian, at the listed element offsets

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitee/error.hpp"
#include "splitee/tensor.hpp"

namespace splitee {

inline constexpr char kContainerMagic[8] = {'S', 'P', 'L', 'I', 'T', 'E', 'E', '1'};
inline constexpr int kContainerVersion = 1;

struct Container {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
};

namespace detail {

inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return r;
}

inline void put_u64(std::string &out, std::uint64_t v) {
  v = to_le(v);
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

inline std::uint64_t get_u64(const char *p) {
  std::uint64_t v = 0;
  std::memcpy(&v, p, 8);
  return to_le(v);
}

} // namespace detail

inline std::string encode_container(const Container &c) {
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto &[name, t] : c.tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"count", t.numel()}});
    offset += t.numel();
  }
  const nlohmann::json header = {
      {"format_version", kContainerVersion}, {"kind", c.kind}, {"meta", c.meta}, {"tensors", entries}};
  const auto text = header.dump();
  std::string out(kContainerMagic, 8);
  detail::put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 8);
  for (const auto &[_, t] : c.tensors) {
    for (double v : t.values) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      detail::put_u64(out, bits);
    }
  }
  return out;
}

inline Container decode_container(const std::string &bytes, const std::string &source = "container") {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0)
    throw format_error(source + ": missing SPLITEE1 magic");
  const auto hlen = detail::get_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw format_error(source + ": header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception &e) {
    throw format_error(source + ": bad header: " + e.what());
  }
  Container c;
  try {
    if (header.at("format_version").get<int>() != kContainerVersion)
      throw format_error(source + ": unsupported format version " + header.at("format_version").dump());
    c.kind = header.at("kind").get<std::string>();
    c.meta = header.at("meta");
    const std::size_t payload_at = 16 + hlen;
    const std::size_t payload_count = (bytes.size() - payload_at) / 8;
    if ((bytes.size() - payload_at) % 8 != 0) throw format_error(source + ": payload is not a whole number of float64");
    for (const auto &e : header.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto count = e.at("count").get<std::uint64_t>();
      if (shape_numel(shape) != count) throw format_error(source + ": tensor '" + name + "' count does not match shape");
      if (offset + count > payload_count) throw format_error(source + ": tensor '" + name + "' exceeds payload");
      std::vector<double> values(count);
      const char *p = bytes.data() + payload_at + offset * 8;
      for (std::uint64_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(detail::get_u64(p + i * 8));
      if (!c.tensors.emplace(name, Tensor(shape, std::move(values))).second)
        throw format_error(source + ": duplicate tensor '" + name + "'");
    }
  } catch (const nlohmann::json::exception &e) {
    throw format_error(source + ": bad header: " + e.what());
  } catch (const dimension_error &e) {
    throw format_error(source + ": " + e.what());
  }
  return c;
}

inline void write_container(const std::filesystem::path &path, const Container &c) {
  const auto bytes = encode_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw format_error("write failed for " + path.string());
}

inline Container read_container(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes, path.string());
}

} // namespace splitee
