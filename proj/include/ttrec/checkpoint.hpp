#pragma once

#include <cstddef>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "ttrec/tt_table.hpp"

namespace ttrec {

inline constexpr char kCheckpointMagic[9] = "TTRECV01";

template <Scalar T>
const char* dtype_name() {
  if constexpr (std::same_as<T, float>) return "f32";
  else return "f64";
}

/// Container serialized as: 8-byte magic, u64-LE header length, UTF-8 JSON
/// header, raw little-endian data section. The header carries shapes and
/// data-section offsets; core/array payloads are bit-exact memory images,
/// so save -> load -> save reproduces the file byte for byte.
class Checkpoint {
 public:
  struct Blob {
    std::string name;
    std::string dtype;
    std::vector<index_t> shape;
    std::vector<std::byte> data;
  };
  struct TableEntry {
    std::string name;
    std::string dtype;
    ShapePlan plan;
    std::vector<std::vector<std::byte>> cores;  // one payload per core
  };

  template <Scalar T>
  void put_table(const TtTable<T>& table) {
    TableEntry e;
    e.name = table.name();
    e.dtype = dtype_name<T>();
    e.plan = table.plan();
    e.cores.resize(table.dim());
    for (int k = 0; k < table.dim(); ++k) {
      auto core = table.core(k);
      e.cores[k].resize(core.size() * sizeof(T));
      std::memcpy(e.cores[k].data(), core.data(), e.cores[k].size());
    }
    put_table_entry(std::move(e));
  }

  template <Scalar T>
  TtTable<T> get_table(const std::string& name) const {
    const TableEntry& e = find_table(name);
    require(e.dtype == dtype_name<T>(), "table '", name, "' stored as ", e.dtype,
            ", requested ", dtype_name<T>());
    TtTable<T> table(e.plan, e.name);
    for (int k = 0; k < table.dim(); ++k) {
      auto core = table.core(k);
      require(e.cores[k].size() == core.size() * sizeof(T), "core ", k, " of table '", name,
              "' has ", e.cores[k].size(), " bytes, expected ", core.size() * sizeof(T));
      std::memcpy(core.data(), e.cores[k].data(), e.cores[k].size());
    }
    table.mark_mutated();
    return table;
  }

  template <Scalar T>
  void put_array(const std::string& name, std::vector<index_t> shape, std::span<const T> values) {
    index_t n = 1;
    for (index_t s : shape) n *= s;
    require_arg(n == static_cast<index_t>(values.size()), "array '", name, "' shape holds ", n,
                " elements but ", values.size(), " were given");
    Blob b;
    b.name = name;
    b.dtype = dtype_name<T>();
    b.shape = std::move(shape);
    b.data.resize(values.size() * sizeof(T));
    std::memcpy(b.data.data(), values.data(), b.data.size());
    put_blob(std::move(b));
  }

  template <Scalar T>
  std::vector<T> get_array(const std::string& name) const {
    const Blob& b = find_array(name);
    require(b.dtype == dtype_name<T>(), "array '", name, "' stored as ", b.dtype,
            ", requested ", dtype_name<T>());
    std::vector<T> out(b.data.size() / sizeof(T));
    std::memcpy(out.data(), b.data.data(), b.data.size());
    return out;
  }

  bool has_table(const std::string& name) const;
  bool has_array(const std::string& name) const;
  const std::vector<TableEntry>& tables() const { return tables_; }
  const std::vector<Blob>& arrays() const { return arrays_; }

  /// The JSON header save() would write (pretty-printed for inspection).
  std::string header_json(int indent = 2) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  void put_table_entry(TableEntry e);
  void put_blob(Blob b);
  const TableEntry& find_table(const std::string& name) const;
  const Blob& find_array(const std::string& name) const;

  std::vector<TableEntry> tables_;
  std::vector<Blob> arrays_;
};

}  // namespace ttrec
