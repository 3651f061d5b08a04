#pragma once
#include <cstddef>
#include <cstdlib>
#include <stdlib.h>
#define __global__ __attribute__((global))
#define __device__ __attribute__((device))
#define __host__ __attribute__((host))
struct dim3 { unsigned x, y, z; __host__ __device__ dim3(unsigned a = 1, unsigned b = 1, unsigned c = 1) : x(a), y(b), z(c) {} };
struct __hip_builtin_idx { unsigned x, y, z; };
extern __device__ const __hip_builtin_idx threadIdx, blockIdx, blockDim, gridDim;
typedef struct CUstream_st* cudaStream_t;
extern "C" int cudaConfigureCall(dim3, dim3, std::size_t = 0, cudaStream_t = 0);
typedef int hipError_t;
constexpr hipError_t hipSuccess = 0;
enum hipMemcpyKind { hipMemcpyHostToDevice, hipMemcpyDeviceToHost };
__device__ float atomicAdd(float*, float);
__device__ double atomicAdd(double*, double);
hipError_t hipMalloc(void*, std::size_t);
template <class T> hipError_t hipMalloc(T**, std::size_t);
hipError_t hipMemcpy(void*, const void*, std::size_t, hipMemcpyKind);
hipError_t hipMemset(void*, int, std::size_t);
hipError_t hipFree(void*);
hipError_t hipDeviceSynchronize();
