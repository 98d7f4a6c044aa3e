#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "ttrec/data.hpp"
#include "ttrec/log.hpp"

namespace ttrec {

namespace {

std::uint64_t fnv1a(const char* s, size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(s[i]);
    h *= 1099511628211ull;
  }
  return h;
}

/// Split on tab when the line has one, else comma. Keeps empty fields.
void split_line(const std::string& line, std::vector<std::string>& out) {
  out.clear();
  const char sep = line.find('\t') != std::string::npos ? '\t' : ',';
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return errno == 0 && end == s.c_str() + s.size() && std::isfinite(out);
}

}  // namespace

CriteoReader::CriteoReader(const std::string& path, std::vector<index_t> table_sizes)
    : table_sizes_(std::move(table_sizes)), path_(path) {
  require_arg(static_cast<index_t>(table_sizes_.size()) == kCriteoCat, "expected ", kCriteoCat,
              " table sizes, got ", table_sizes_.size());
  for (index_t s : table_sizes_) require_arg(s >= 2, "table sizes must be >= 2, got ", s);
  FILE* f = std::fopen(path.c_str(), "rb");
  require(f != nullptr, "cannot open '", path, "'");
  file_ = f;
}

CriteoReader::~CriteoReader() {
  if (file_) std::fclose(static_cast<FILE*>(file_));
}

bool CriteoReader::next(Record& out) {
  FILE* f = static_cast<FILE*>(file_);
  std::string line;
  std::vector<std::string> fields;
  char buf[1 << 16];
  while (std::fgets(buf, sizeof(buf), f)) {
    ++line_;
    line.assign(buf);
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
    if (line.empty()) continue;
    split_line(line, fields);
    require(static_cast<index_t>(fields.size()) == 1 + kCriteoDense + kCriteoCat, "'", path_,
            "' line ", line_, ": expected ", 1 + kCriteoDense + kCriteoCat, " fields, got ",
            fields.size());

    double label;
    if (!parse_double(fields[0], label) || (label != 0.0 && label != 1.0)) {
      ++rows_skipped_;
      log_debug(concat("skipping line ", line_, ": bad label '", fields[0], "'"));
      continue;
    }

    out.label = label;
    out.dense.assign(kCriteoDense, 0.0);
    bool ok = true;
    for (index_t i = 0; i < kCriteoDense; ++i) {
      const std::string& s = fields[1 + i];
      if (s.empty()) continue;  // missing -> 0
      double v;
      if (!parse_double(s, v)) {
        ok = false;
        log_debug(concat("skipping line ", line_, ": bad dense field ", i, " '", s, "'"));
        break;
      }
      out.dense[i] = std::log1p(std::max(v, 0.0));
    }
    if (!ok) {
      ++rows_skipped_;
      continue;
    }

    out.cats.assign(kCriteoCat, 0);
    for (index_t i = 0; i < kCriteoCat; ++i) {
      const std::string& s = fields[1 + kCriteoDense + i];
      if (s.empty()) continue;  // missing -> reserved id 0
      const std::uint64_t h = fnv1a(s.data(), s.size());
      out.cats[i] = 1 + static_cast<index_t>(h % static_cast<std::uint64_t>(table_sizes_[i] - 1));
    }
    ++rows_read_;
    return true;
  }
  return false;
}

CriteoDataSource::CriteoDataSource(const std::string& path, std::vector<index_t> table_sizes,
                                   index_t batch_size)
    : batch_size_(batch_size) {
  require_arg(batch_size >= 1, "batch_size must be positive, got ", batch_size);
  CriteoReader reader(path, std::move(table_sizes));
  CriteoReader::Record rec;
  while (reader.next(rec)) {
    dense_.insert(dense_.end(), rec.dense.begin(), rec.dense.end());
    cats_.insert(cats_.end(), rec.cats.begin(), rec.cats.end());
    labels_.push_back(rec.label);
  }
  rows_skipped_ = reader.rows_skipped();
  require(!labels_.empty(), "'", path, "' produced no usable rows");
  if (rows_skipped_ > 0)
    log_warn(concat("'", path, "': skipped ", rows_skipped_, " malformed rows, kept ",
                    labels_.size()));
}

MiniBatch CriteoDataSource::next(index_t iteration) {
  const index_t n = num_records();
  MiniBatch mb;
  mb.batch_size = batch_size_;
  mb.dense.resize(static_cast<size_t>(batch_size_) * kCriteoDense);
  mb.labels.resize(batch_size_);
  mb.tables.assign(kCriteoCat, IndexBatch{});
  for (auto& tb : mb.tables) tb.offsets.reserve(batch_size_ + 1);
  for (index_t i = 0; i < batch_size_; ++i) {
    const index_t r = (iteration * batch_size_ + i) % n;
    std::copy(dense_.begin() + r * kCriteoDense, dense_.begin() + (r + 1) * kCriteoDense,
              mb.dense.begin() + i * kCriteoDense);
    mb.labels[i] = labels_[r];
    for (index_t t = 0; t < kCriteoCat; ++t) {
      auto& tb = mb.tables[t];
      tb.indices.push_back(cats_[r * kCriteoCat + t]);
      tb.offsets.push_back(static_cast<index_t>(tb.indices.size()));
    }
  }
  return mb;
}

}  // namespace ttrec
