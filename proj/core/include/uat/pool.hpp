#pragma once

#include <bit>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "uat/tensor.hpp"

namespace uat {

// Recycles large buffers across graph rebuilds. Training builds and drops a
// graph per batch; without recycling, every batch would hand multi-megabyte
// blocks back to the allocator (and the OS), paying page faults on each reuse.
//
// Blocks live in power-of-two size classes. release() runs from Tensor
// deleters, which may outlive the pool; the deleter holds a weak_ptr.
template <class T>
class BufferPool : public std::enable_shared_from_this<BufferPool<T>> {
 public:
  static std::shared_ptr<BufferPool> create() { return std::shared_ptr<BufferPool>(new BufferPool()); }

  std::shared_ptr<T[]> acquire(int64_t n) {
    if (n <= 0) n = 1;
    const uint64_t cap = std::bit_ceil(static_cast<uint64_t>(n));
    T* p = nullptr;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = free_.find(std::bit_width(cap));
      if (it != free_.end() && !it->second.empty()) {
        p = it->second.back().release();
        it->second.pop_back();
      }
    }
    if (!p) p = new T[cap];
    std::weak_ptr<BufferPool> weak = this->weak_from_this();
    return std::shared_ptr<T[]>(p, [weak, cap](T* q) {
      if (auto pool = weak.lock())
        pool->release(q, cap);
      else
        delete[] q;
    });
  }

  Tensor<T> tensor(Shape shape) {
    const int64_t n = shape_size(shape);
    return Tensor<T>::adopt(std::move(shape), acquire(n));
  }

  // Number of idle blocks currently held.
  size_t idle() const {
    std::lock_guard<std::mutex> lock(mu_);
    size_t n = 0;
    for (const auto& [w, bucket] : free_) n += bucket.size();
    return n;
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mu_);
    free_.clear();
  }

 private:
  BufferPool() = default;

  void release(T* p, uint64_t cap) {
    std::lock_guard<std::mutex> lock(mu_);
    free_[std::bit_width(cap)].emplace_back(p);
  }

  mutable std::mutex mu_;
  std::map<int, std::vector<std::unique_ptr<T[]>>> free_;
};

}  // namespace uat
