#include "evtrack/events.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evtrack/params.hpp"

namespace evtrack {

namespace {
constexpr char kMagic[4] = {'E', 'V', 'T', '1'};
constexpr size_t kRecordBytes = 16;
}  // namespace

EventStream load_events(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open events file: " + path);

  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path + ": not an EVT1 file (bad magic)");
  }
  EventStream stream;
  stream.width = ad::read_u32(is);
  stream.height = ad::read_u32(is);
  const uint64_t count = ad::read_u64(is);
  if (stream.width == 0 || stream.height == 0) {
    throw FormatError(path + ": zero sensor dimension in header");
  }

  stream.events.reserve(count);
  int64_t prev_t = -1;
  for (uint64_t i = 0; i < count; ++i) {
    char rec[kRecordBytes];
    is.read(rec, kRecordBytes);
    if (static_cast<size_t>(is.gcount()) != kRecordBytes) {
      throw FormatError(path + ": truncated at record " + std::to_string(i));
    }
    Event e;
    uint64_t t;
    uint16_t x, y;
    std::memcpy(&t, rec, 8);
    std::memcpy(&x, rec + 8, 2);
    std::memcpy(&y, rec + 10, 2);
    const int8_t pol = static_cast<int8_t>(rec[12]);
    e.t_us = static_cast<int64_t>(t);
    e.x = x;
    e.y = y;
    e.polarity = pol;
    if (e.x >= stream.width || e.y >= stream.height) {
      throw ValidationError(path + ": record " + std::to_string(i) + " coordinate (" +
                            std::to_string(e.x) + ", " + std::to_string(e.y) +
                            ") outside sensor " + std::to_string(stream.width) + "x" +
                            std::to_string(stream.height));
    }
    if (pol != 1 && pol != -1) {
      throw ValidationError(path + ": record " + std::to_string(i) + " polarity " +
                            std::to_string(pol) + " not in {+1, -1}");
    }
    if (e.t_us < prev_t) {
      throw ValidationError(path + ": record " + std::to_string(i) +
                            " timestamp decreases (" + std::to_string(e.t_us) + " after " +
                            std::to_string(prev_t) + ")");
    }
    prev_t = e.t_us;
    stream.events.push_back(e);
  }
  return stream;
}

void write_events(const std::string& path, const EventStream& stream) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write events file: " + path);
  os.write(kMagic, 4);
  ad::write_u32(os, static_cast<uint32_t>(stream.width));
  ad::write_u32(os, static_cast<uint32_t>(stream.height));
  ad::write_u64(os, stream.events.size());
  for (const auto& e : stream.events) {
    char rec[kRecordBytes] = {};
    const uint64_t t = static_cast<uint64_t>(e.t_us);
    const uint16_t x = static_cast<uint16_t>(e.x);
    const uint16_t y = static_cast<uint16_t>(e.y);
    std::memcpy(rec, &t, 8);
    std::memcpy(rec + 8, &x, 2);
    std::memcpy(rec + 10, &y, 2);
    rec[12] = static_cast<char>(e.polarity);
    os.write(rec, kRecordBytes);
  }
  if (!os) throw FormatError("write failed: " + path);
}

LabelTrack load_labels(const std::string& path, double rate_hz) {
  if (rate_hz <= 0.0) throw ContractError("load_labels: rate must be positive");
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open labels file: " + path);

  std::string line;
  if (!std::getline(is, line)) throw FormatError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t_us,x,y,close") {
    throw FormatError(path + ": expected header 't_us,x,y,close', got '" + line + "'");
  }

  LabelTrack track;
  track.rate_hz = rate_hz;
  const double spacing = 1e6 / rate_hz;
  size_t row = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    std::istringstream ss(line);
    std::string field;
    LabelSample s;
    try {
      if (!std::getline(ss, field, ',')) throw FormatError("");
      s.t_us = std::stoll(field);
      if (!std::getline(ss, field, ',')) throw FormatError("");
      s.x = std::stod(field);
      if (!std::getline(ss, field, ',')) throw FormatError("");
      s.y = std::stod(field);
      if (!std::getline(ss, field, ',')) throw FormatError("");
      const long close = std::stol(field);
      if (close != 0 && close != 1) {
        throw ValidationError(path + ": row " + std::to_string(row) + " close value " +
                              std::to_string(close) + " not in {0, 1}");
      }
      s.close = static_cast<uint8_t>(close);
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception&) {
      throw FormatError(path + ": row " + std::to_string(row) +
                        " missing or malformed column in '" + line + "'");
    }
    if (!track.samples.empty()) {
      const double dt = static_cast<double>(s.t_us - track.samples.back().t_us);
      if (std::abs(dt - spacing) > 1.0) {
        throw ValidationError(path + ": row " + std::to_string(row) + " spacing " +
                              std::to_string(dt) + " us does not match rate " +
                              std::to_string(rate_hz) + " Hz");
      }
    }
    track.samples.push_back(s);
  }
  return track;
}

void write_labels(const std::string& path, const LabelTrack& track) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write labels file: " + path);
  os << "t_us,x,y,close\n";
  char buf[128];
  for (const auto& s : track.samples) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%d\n",
                  static_cast<long long>(s.t_us), s.x, s.y, static_cast<int>(s.close));
    os << buf;
  }
  if (!os) throw FormatError("write failed: " + path);
}

LabelTrack downsample_labels(const LabelTrack& track, double factor) {
  if (factor <= 0.0 || factor > 1.0) {
    throw ContractError("downsample_labels: factor must be in (0, 1]");
  }
  const double inv = 1.0 / factor;
  const int64_t k = static_cast<int64_t>(std::llround(inv));
  if (std::abs(inv - static_cast<double>(k)) > 1e-9 * inv) {
    throw ContractError("downsample_labels: 1/factor = " + std::to_string(inv) +
                        " is not an integer");
  }
  LabelTrack out;
  out.rate_hz = track.rate_hz * factor;
  for (size_t i = 0; i < track.samples.size(); i += static_cast<size_t>(k)) {
    out.samples.push_back(track.samples[i]);
  }
  return out;
}

std::pair<EventStream, LabelTrack> spatial_downscale(const EventStream& stream,
                                                     const LabelTrack& labels,
                                                     double factor) {
  if (factor <= 0.0 || factor > 1.0) {
    throw ContractError("spatial_downscale: factor must be in (0, 1]");
  }
  if (static_cast<double>(stream.width) * factor < 1.0 ||
      static_cast<double>(stream.height) * factor < 1.0) {
    throw ContractError("spatial_downscale: factor collapses sensor below one pixel");
  }
  EventStream out;
  out.width = static_cast<int64_t>(std::ceil(static_cast<double>(stream.width) * factor));
  out.height = static_cast<int64_t>(std::ceil(static_cast<double>(stream.height) * factor));
  out.events.reserve(stream.events.size());
  for (const auto& e : stream.events) {
    Event m = e;
    m.x = static_cast<int32_t>(std::floor(static_cast<double>(e.x) * factor));
    m.y = static_cast<int32_t>(std::floor(static_cast<double>(e.y) * factor));
    out.events.push_back(m);
  }
  LabelTrack lt;
  lt.rate_hz = labels.rate_hz;
  lt.samples.reserve(labels.samples.size());
  for (const auto& s : labels.samples) {
    LabelSample m = s;
    m.x = s.x * factor;
    m.y = s.y * factor;
    lt.samples.push_back(m);
  }
  return {std::move(out), std::move(lt)};
}

}  // namespace evtrack
