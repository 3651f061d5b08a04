#pragma once
#include <cstddef>
namespace thrust {
template <class T> struct device_ptr { T* get() const { return p; } T* p = nullptr; };
template <class T> class device_vector {
 public:
  device_vector(std::size_t n, const T& v);
  device_ptr<T> data();
  std::size_t size() const;
};
}  // namespace thrust
