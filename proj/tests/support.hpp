#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <system_error>

#include <unistd.h>

#include "freeevent/image.hpp"
#include "freeevent/tensor.hpp"
#include "freeevent/transfer.hpp"
#include "freeevent/unet.hpp"

// Compact gtest printers; the default byte dumps are unreadable.
namespace freeevent {
inline void PrintTo(const Tensor& t, std::ostream* os) {
  *os << "Tensor" << shape_string(t.shape()) << " l2=" << l2_norm(t);
}
inline void PrintTo(const Image& im, std::ostream* os) {
  *os << "Image " << im.height << "x" << im.width << "x" << im.channels;
}
inline void PrintTo(const AttentionTrace& t, std::ostream* os) { *os << "AttentionTrace(" << t.record_count() << ")"; }
inline void PrintTo(const ReferenceContext& c, std::ostream* os) {
  *os << "ReferenceContext(" << c.traces.size() << " steps)";
}
}  // namespace freeevent

namespace fe_test {

inline freeevent::UNet toy_net(std::uint64_t seed = 3) {
  return freeevent::UNet::initialize(freeevent::UNetConfig{}, seed);
}

inline freeevent::Tensor random_tensor(std::uint64_t seed, freeevent::Shape shape = {3, 8, 8}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  freeevent::Tensor t(std::move(shape));
  for (double& v : t.storage()) v = n(rng);
  return t;
}

class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("freeevent_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

}  // namespace fe_test
