#include "ttrec/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include <json.hpp>

namespace ttrec {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are raw little-endian images");

using nlohmann::json;

namespace {

json plan_to_json(const ShapePlan& p) {
  json j;
  j["num_rows"] = p.num_rows;
  j["emb_dim"] = p.emb_dim;
  j["tt_dim"] = p.tt_dim;
  j["row_factors"] = p.row_factors;
  j["col_factors"] = p.col_factors;
  j["ranks"] = p.ranks;
  return j;
}

ShapePlan plan_from_json(const json& j) {
  ShapePlan p;
  p.num_rows = j.at("num_rows").get<index_t>();
  p.emb_dim = j.at("emb_dim").get<index_t>();
  p.tt_dim = j.at("tt_dim").get<int>();
  p.row_factors = j.at("row_factors").get<std::vector<index_t>>();
  p.col_factors = j.at("col_factors").get<std::vector<index_t>>();
  p.ranks = j.at("ranks").get<std::vector<index_t>>();
  p.validate();
  return p;
}

/// Header plus the data-section layout (offsets assigned in storage order).
json build_header(const std::vector<Checkpoint::TableEntry>& tables,
                  const std::vector<Checkpoint::Blob>& arrays) {
  json header;
  header["format"] = kCheckpointMagic;
  header["layout"] = "row_digit_major";
  std::uint64_t offset = 0;
  json jtables = json::array();
  for (const auto& t : tables) {
    json jt;
    jt["name"] = t.name;
    jt["dtype"] = t.dtype;
    jt["plan"] = plan_to_json(t.plan);
    json jcores = json::array();
    for (const auto& c : t.cores) {
      json jc;
      jc["offset"] = offset;
      jc["bytes"] = c.size();
      offset += c.size();
      jcores.push_back(jc);
    }
    jt["cores"] = jcores;
    jtables.push_back(jt);
  }
  header["tables"] = jtables;
  json jarrays = json::array();
  for (const auto& a : arrays) {
    json ja;
    ja["name"] = a.name;
    ja["dtype"] = a.dtype;
    ja["shape"] = a.shape;
    ja["offset"] = offset;
    ja["bytes"] = a.data.size();
    offset += a.data.size();
    jarrays.push_back(ja);
  }
  header["arrays"] = jarrays;
  header["data_bytes"] = offset;
  return header;
}

}  // namespace

bool Checkpoint::has_table(const std::string& name) const {
  for (const auto& t : tables_)
    if (t.name == name) return true;
  return false;
}

bool Checkpoint::has_array(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return true;
  return false;
}

void Checkpoint::put_table_entry(TableEntry e) {
  require_arg(!has_table(e.name), "duplicate table name '", e.name, "'");
  tables_.push_back(std::move(e));
}

void Checkpoint::put_blob(Blob b) {
  require_arg(!has_array(b.name), "duplicate array name '", b.name, "'");
  arrays_.push_back(std::move(b));
}

const Checkpoint::TableEntry& Checkpoint::find_table(const std::string& name) const {
  for (const auto& t : tables_)
    if (t.name == name) return t;
  fail("checkpoint has no table named '", name, "'");
}

const Checkpoint::Blob& Checkpoint::find_array(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return a;
  fail("checkpoint has no array named '", name, "'");
}

std::string Checkpoint::header_json(int indent) const {
  return build_header(tables_, arrays_).dump(indent);
}

void Checkpoint::save(const std::string& path) const {
  const std::string header = build_header(tables_, arrays_).dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot open '", path, "' for writing");
  out.write(kCheckpointMagic, 8);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : tables_)
    for (const auto& c : t.cores)
      out.write(reinterpret_cast<const char*>(c.data()), static_cast<std::streamsize>(c.size()));
  for (const auto& a : arrays_)
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size()));
  out.flush();
  require(out.good(), "write to '", path, "' failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open '", path, "'");
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
          "'", path, "' is not a TTRECV01 checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  require(in.good() && len > 0 && len < (1ull << 32), "corrupt header length in '", path, "'");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  require(in.good(), "truncated header in '", path, "'");

  json j;
  try {
    j = json::parse(header);
  } catch (const json::exception& e) {
    fail("corrupt header JSON in '", path, "': ", e.what());
  }
  require(j.value("format", "") == std::string(kCheckpointMagic), "bad format tag in '", path,
          "'");

  const std::uint64_t data_bytes = j.at("data_bytes").get<std::uint64_t>();
  std::vector<std::byte> data(data_bytes);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data_bytes));
  require(in.gcount() == static_cast<std::streamsize>(data_bytes), "truncated data section in '",
          path, "'");

  auto take = [&](std::uint64_t offset, std::uint64_t bytes) {
    require(offset + bytes <= data_bytes, "segment [", offset, ", ", offset + bytes,
            ") outside data section of '", path, "'");
    return std::vector<std::byte>(data.begin() + static_cast<std::ptrdiff_t>(offset),
                                  data.begin() + static_cast<std::ptrdiff_t>(offset + bytes));
  };

  Checkpoint cp;
  for (const auto& jt : j.at("tables")) {
    TableEntry e;
    e.name = jt.at("name").get<std::string>();
    e.dtype = jt.at("dtype").get<std::string>();
    require(e.dtype == "f32" || e.dtype == "f64", "unknown dtype '", e.dtype, "' in '", path,
            "'");
    e.plan = plan_from_json(jt.at("plan"));
    const std::size_t elem = e.dtype == "f32" ? 4 : 8;
    const auto& jcores = jt.at("cores");
    require(static_cast<int>(jcores.size()) == e.plan.tt_dim, "table '", e.name, "' lists ",
            jcores.size(), " cores, plan needs ", e.plan.tt_dim);
    for (int k = 0; k < e.plan.tt_dim; ++k) {
      const auto& jc = jcores.at(k);
      const auto bytes = jc.at("bytes").get<std::uint64_t>();
      require(bytes == static_cast<std::uint64_t>(e.plan.core_size(k)) * elem, "core ", k,
              " of '", e.name, "' has ", bytes, " bytes, plan needs ",
              e.plan.core_size(k) * static_cast<index_t>(elem));
      e.cores.push_back(take(jc.at("offset").get<std::uint64_t>(), bytes));
    }
    cp.put_table_entry(std::move(e));
  }
  for (const auto& ja : j.at("arrays")) {
    Blob b;
    b.name = ja.at("name").get<std::string>();
    b.dtype = ja.at("dtype").get<std::string>();
    require(b.dtype == "f32" || b.dtype == "f64", "unknown dtype '", b.dtype, "' in '", path,
            "'");
    b.shape = ja.at("shape").get<std::vector<index_t>>();
    const std::size_t elem = b.dtype == "f32" ? 4 : 8;
    index_t n = 1;
    for (index_t s : b.shape) n *= s;
    const auto bytes = ja.at("bytes").get<std::uint64_t>();
    require(bytes == static_cast<std::uint64_t>(n) * elem, "array '", b.name, "' has ", bytes,
            " bytes, shape needs ", n * static_cast<index_t>(elem));
    b.data = take(ja.at("offset").get<std::uint64_t>(), bytes);
    cp.put_blob(std::move(b));
  }
  return cp;
}

}  // namespace ttrec
