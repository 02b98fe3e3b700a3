// Binary PPM frames and metrics CSV files.

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "afp/param_io.hpp"
#include "afp/warp.hpp"

namespace afp {

// 8-bit binary P6; values are divided by 255.
inline Frame<float> read_ppm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) { return IoError(path.string() + ": " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw fail(std::string("malformed PPM header (") + what + ")");
    return std::stoul(bytes.substr(start, pos - start));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw fail("not a binary PPM (P6)");
  pos = 2;
  const std::size_t w = number("width"), h = number("height"), maxval = number("maxval");
  if (w == 0 || h == 0) throw fail("malformed PPM header (zero size)");
  if (maxval != 255) throw fail("only 8-bit PPM (maxval 255) is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw fail("malformed PPM header");
  ++pos;
  if (bytes.size() - pos != 3 * w * h) throw fail("pixel data length does not match header");
  std::vector<float> data(3 * w * h);
  for (std::size_t i = 0; i < w * h; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      data[c * w * h + i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + 3 * i + c])) / 255.0f;
  return Frame<float>::from({3, h, w}, std::move(data));
}

template <typename T>
void write_ppm(const std::filesystem::path& path, const Frame<T>& f) {
  const std::size_t H = f.dim(1), W = f.dim(2);
  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  for (std::size_t i = 0; i < H * W; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(f[c * H * W + i]), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  write_file(path, out);
}

// All frame_%06d.ppm in dir, in index order. Indices must be contiguous and
// every frame the same size.
inline std::vector<Frame<float>> read_sequence(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  static const std::regex name_re(R"(frame_(\d{6})\.ppm)");
  std::map<long, std::filesystem::path> found;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, name_re)) found[std::stol(m[1])] = e.path();
  }
  if (found.empty()) throw IoError("no frame_%06d.ppm files in '" + dir.string() + "'");
  std::vector<Frame<float>> frames;
  long expected = found.begin()->first;
  for (const auto& [idx, path] : found) {
    if (idx != expected)
      throw IoError("non-contiguous frame index: expected frame_" + std::to_string(expected) + " before '" +
                    path.filename().string() + "'");
    frames.push_back(read_ppm(path));
    if (frames.back().shape() != frames.front().shape())
      throw IoError("'" + path.filename().string() + "' has a different size from the first frame");
    ++expected;
  }
  return frames;
}

// One scored frame: Repeat, pre-trained, continuous and ensemble predictions.
struct MetricRecord {
  std::uint64_t frame_index = 0;
  std::size_t scene_id = 0;
  double ssim_ensemble = 0, ssim_pretrained = 0, ssim_continuous = 0, ssim_repeat = 0;
  double psnr_ensemble = 0, psnr_pretrained = 0, psnr_continuous = 0, psnr_repeat = 0;
  bool updated = false;
  std::optional<double> loss;
};

inline constexpr const char* kMetricsHeader =
    "frame_index,scene_id,ssim_ensemble,ssim_pretrained,ssim_continuous,ssim_repeat,"
    "psnr_ensemble,psnr_pretrained,psnr_continuous,psnr_repeat,updated,loss";

inline std::string format_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string metrics_csv(const std::vector<MetricRecord>& records) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.frame_index) + "," + std::to_string(r.scene_id);
    for (double v : {r.ssim_ensemble, r.ssim_pretrained, r.ssim_continuous, r.ssim_repeat, r.psnr_ensemble,
                     r.psnr_pretrained, r.psnr_continuous, r.psnr_repeat})
      out += "," + format_fixed(v);
    out += r.updated ? ",1," : ",0,";
    if (r.loss) out += format_fixed(*r.loss);
    out += "\n";
  }
  return out;
}

inline void write_csv(const std::vector<MetricRecord>& records, const std::filesystem::path& path) {
  write_file(path, metrics_csv(records));
}

inline std::vector<MetricRecord> read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw IoError(path.string() + ": unexpected CSV header");
  std::vector<MetricRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 12) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 12 fields");
    try {
      MetricRecord r;
      r.frame_index = std::stoull(f[0]);
      r.scene_id = std::stoul(f[1]);
      double* dst[] = {&r.ssim_ensemble, &r.ssim_pretrained, &r.ssim_continuous, &r.ssim_repeat,
                       &r.psnr_ensemble, &r.psnr_pretrained, &r.psnr_continuous, &r.psnr_repeat};
      for (int i = 0; i < 8; ++i) *dst[i] = std::stod(f[2 + i]);
      r.updated = f[10] == "1";
      if (!f[11].empty()) r.loss = std::stod(f[11]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

}  // namespace afp
