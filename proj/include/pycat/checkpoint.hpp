#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "pycat/params.hpp"

namespace pycat {

constexpr uint32_t kCheckpointVersion = 1;

/// Layout: magic "PYCATCK1", u32 version, u32 tensor count, then per tensor
/// u16 name length, name bytes, u8 dtype (1 = f64), u8 rank, u32 dims and
/// little-endian values. Throws ContractError for non-finite parameters.
void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors);
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);

/// Throws LoadError naming the byte offset for bad magic, version or truncation.
std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path);

/// Copies every stored tensor into the matching parameter. Throws LoadError
/// listing absent or unexpected names and shape mismatches.
void load_checkpoint(const std::filesystem::path& path, ParamStore& store);
void assign_parameters(const std::map<std::string, Tensor>& stored, ParamStore& store, const std::string& source);

}  // namespace pycat
