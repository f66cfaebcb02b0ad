#include "masm/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "masm/error.hpp"
#include "masm/tensor_io.hpp"

namespace masm {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'S', 'M', 'C', 'K', 'P', '1'};
constexpr std::uint64_t kMaxManifest = 1u << 24;

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const Model& model = ckpt.model;
  nlohmann::json manifest;
  manifest["config"] = ckpt.config_json;
  manifest["step"] = ckpt.step;
  manifest["rng"] = {{"seed", ckpt.rng.seed()}, {"counter", ckpt.rng.counter()}};
  manifest["model"] = {{"d_model", model.config.d_model},
                       {"n_blocks", model.config.n_blocks},
                       {"n_tokens", model.config.n_tokens},
                       {"d_hidden", model.config.d_hidden},
                       {"n_classes_pretrain", model.config.n_classes_pretrain},
                       {"head_outputs", model.head.rows()}};
  nlohmann::json kinds = nlohmann::json::array();
  for (const auto& b : model.blocks)
    for (const auto& p : b.attn) kinds.push_back(p.decomposed() ? "decomposed" : "dense");
  manifest["projections"] = kinds;
  const std::string text = manifest.dump();

  out.write(kMagic, sizeof(kMagic));
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_matrix(out, model.token_embed);
  for (const auto& b : model.blocks) {
    write_vector(out, b.norm1.gain);
    write_vector(out, b.norm1.bias);
    for (const auto& p : b.attn) {
      if (p.decomposed()) {
        write_layer(out, p.layer());
      } else {
        write_matrix(out, p.dense());
      }
    }
    write_vector(out, b.norm2.gain);
    write_vector(out, b.norm2.bias);
    write_matrix(out, b.mlp_in);
    write_matrix(out, b.mlp_out);
  }
  write_matrix(out, model.head);
  if (!out) throw Error(ErrorCode::kIo, "checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != 8 || !std::equal(magic, magic + 8, kMagic)) {
    throw Error(ErrorCode::kIo, "not a checkpoint (bad magic)");
  }
  const std::uint64_t len = read_u64(in);
  if (len > kMaxManifest) throw Error(ErrorCode::kIo, "checkpoint manifest too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(in.gcount()) != len) {
    throw Error(ErrorCode::kIo, "truncated checkpoint manifest");
  }

  Checkpoint ckpt;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
    ckpt.config_json = manifest.at("config").get<std::string>();
    ckpt.step = manifest.at("step").get<std::uint64_t>();
    ckpt.rng = Rng(manifest.at("rng").at("seed").get<std::uint64_t>(),
                   manifest.at("rng").at("counter").get<std::uint64_t>());
    const auto& m = manifest.at("model");
    ckpt.model.config.d_model = m.at("d_model").get<std::size_t>();
    ckpt.model.config.n_blocks = m.at("n_blocks").get<std::size_t>();
    ckpt.model.config.n_tokens = m.at("n_tokens").get<std::size_t>();
    ckpt.model.config.d_hidden = m.at("d_hidden").get<std::size_t>();
    ckpt.model.config.n_classes_pretrain = m.at("n_classes_pretrain").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo, std::string("bad checkpoint manifest: ") + e.what());
  }
  const auto kinds = manifest.at("projections");
  Model& model = ckpt.model;
  if (kinds.size() != 4 * model.config.n_blocks) {
    throw Error(ErrorCode::kIo, "checkpoint projection list does not match block count");
  }
  model.token_embed = read_matrix(in);
  std::size_t proj = 0;
  for (std::size_t b = 0; b < model.config.n_blocks; ++b) {
    Block blk;
    blk.norm1.gain = read_vector(in);
    blk.norm1.bias = read_vector(in);
    for (auto& p : blk.attn) {
      if (kinds[proj++].get<std::string>() == "decomposed") {
        p = Projection(read_layer(in));
      } else {
        p = Projection(read_matrix(in));
      }
    }
    blk.norm2.gain = read_vector(in);
    blk.norm2.bias = read_vector(in);
    blk.mlp_in = read_matrix(in);
    blk.mlp_out = read_matrix(in);
    model.blocks.push_back(std::move(blk));
  }
  model.head = read_matrix(in);
  const std::size_t d = model.config.d_model;
  if (model.token_embed.rows() != model.config.n_tokens || model.token_embed.cols() != d ||
      model.head.cols() != d + 1) {
    throw Error(ErrorCode::kShapeMismatch, "checkpoint tensors disagree with the manifest shape");
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write checkpoint " + path);
  write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace masm
