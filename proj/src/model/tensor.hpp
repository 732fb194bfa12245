#pragma once

#include <cstddef>
#include <vector>

namespace cactus::model {

/// Activation batch in channel-major layout [C][N][H][W]. Keeping each channel
/// contiguous across the batch lets one GEMM cover a whole batch and makes
/// batch-norm statistics a single pass per row.
template <typename T>
struct Activation {
  int channels = 0;
  int batch = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  void resize(int c, int n, int h, int w) {
    channels = c;
    batch = n;
    height = h;
    width = w;
    data.assign(static_cast<std::size_t>(c) * n * h * w, T(0));
  }
  std::size_t spatial() const { return static_cast<std::size_t>(height) * width; }
  std::size_t plane() const { return static_cast<std::size_t>(batch) * spatial(); }
  T* channel(int c) { return data.data() + static_cast<std::size_t>(c) * plane(); }
  const T* channel(int c) const { return data.data() + static_cast<std::size_t>(c) * plane(); }
  T* at(int c, int n) { return channel(c) + static_cast<std::size_t>(n) * spatial(); }
  const T* at(int c, int n) const { return channel(c) + static_cast<std::size_t>(n) * spatial(); }
};

/// Converts a batch of planar [C][H][W] samples (contiguous, sample-major) into
/// the channel-major layout.
template <typename T, typename Src>
Activation<T> from_samples(const Src* samples, int n, int c, int h, int w) {
  Activation<T> out;
  out.resize(c, n, h, w);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const Src* src = samples + (static_cast<std::size_t>(s) * c + ch) * hw;
      T* dst = out.at(ch, s);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = static_cast<T>(src[i]);
    }
  return out;
}

/// Feature matrix [dim][batch] (column per sample).
template <typename T>
struct Features {
  int dim = 0;
  int batch = 0;
  std::vector<T> data;

  T& at(int d, int n) { return data[static_cast<std::size_t>(d) * batch + n]; }
  T at(int d, int n) const { return data[static_cast<std::size_t>(d) * batch + n]; }
};

}  // namespace cactus::model
