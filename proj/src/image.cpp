#include "uarmor/image.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"

namespace uarmor::fw {

namespace {

constexpr char kMagic[4] = {'U', 'V', 'M', '1'};
constexpr std::string_view kSensitiveSection = ".text.sensitive";
constexpr std::string_view kSensitivePadding = ".pad.sensitive";

struct Layout {
  std::vector<const FunctionDef*> order;
  std::map<std::string, std::uint32_t, std::less<>> fn_addr;
  std::map<std::string, std::map<std::string, std::uint32_t>, std::less<>> label_addr;
  std::map<std::string, std::uint32_t, std::less<>> global_addr;
  std::uint32_t sensitive_end = 0;    // end of real sensitive code
  std::uint32_t sensitive_padded = 0; // end including padding
  std::uint32_t code_end = 0;
  std::uint32_t data_size = 0;
};

Layout compute_layout(const FirmwareModule& m, const LayoutOptions& opts) {
  Layout L;
  for (const auto& f : m.functions) {
    if (f.is_sensitive && !f.is_lock) L.order.push_back(&f);
  }
  std::uint32_t addr = opts.flash_base;
  auto place = [&](const FunctionDef* f) {
    L.fn_addr[f->name] = addr;
    auto& labels = L.label_addr[f->name];
    for (const auto& b : f->blocks) {
      labels[b.label] = addr;
      addr += std::uint32_t(b.insns.size() * 4);
    }
  };
  for (const auto* f : L.order) place(f);
  L.sensitive_end = addr;
  std::uint32_t sens_size = addr - opts.flash_base;
  if (opts.align_sensitive && sens_size > 0) {
    std::uint32_t region = std::max<std::uint32_t>(32, std::bit_ceil(sens_size));
    if (opts.flash_base % region != 0) {
      throw Error(ErrorCode::AlignmentUnsatisfiable,
                  "flash base is not aligned to the sensitive region size " + std::to_string(region));
    }
    addr = opts.flash_base + padded_sensitive_size(sens_size);
  }
  L.sensitive_padded = addr;
  for (const auto& f : m.functions) {
    if (!(f.is_sensitive && !f.is_lock)) {
      L.order.push_back(&f);
      place(&f);
    }
  }
  L.code_end = addr;

  std::uint32_t off = 0;
  for (const auto& g : m.globals) {
    L.global_addr[g.name] = opts.data_base + off;
    off += align4(g.size);
  }
  L.data_size = off;
  return L;
}

std::uint32_t body_index(const FunctionDef& f) {
  const auto& insns = f.blocks.front().insns;
  std::uint32_t idx = 0;
  if (idx < insns.size() && insns[idx].op == Opcode::Pushm) ++idx;
  if (idx < insns.size() && insns[idx].op == Opcode::Alu && AluOp(insns[idx].sub) == AluOp::Sub &&
      insns[idx].rd == kSp && insns[idx].sym.kind == SymRef::Kind::FrameSize) {
    ++idx;
    if (f.has_canary) idx += 4;
  }
  return std::min<std::uint32_t>(idx, std::uint32_t(insns.size()));
}

Instruction resolve(const Instruction& in, const FunctionDef& f, std::uint32_t pc, const Layout& L,
                    const LayoutOptions& opts) {
  Instruction out = in;
  if (in.sym.kind == SymRef::Kind::None) return out;
  const auto& s = in.sym;
  std::int64_t value = 0;
  bool code_relative = false;
  auto unresolved = [&](const std::string& what) {
    throw Error(ErrorCode::InvalidArgument, "unresolved " + what + " '" + s.name + "' in " + f.name);
  };
  switch (s.kind) {
    case SymRef::Kind::Local: {
      const auto* l = f.find_local(s.name);
      if (!l || l->offset < 0) unresolved("local");
      value = l->offset + s.addend;
      break;
    }
    case SymRef::Kind::FrameSize:
      value = f.frame_size() + s.addend;
      break;
    case SymRef::Kind::CanarySlot:
      value = f.canary_offset() + s.addend;
      break;
    case SymRef::Kind::Label: {
      auto fl = L.label_addr.find(f.name);
      auto it = fl->second.find(s.name);
      if (it == fl->second.end()) unresolved("label");
      value = std::int64_t(it->second) + s.addend;
      code_relative = true;
      break;
    }
    case SymRef::Kind::Function: {
      auto it = L.fn_addr.find(s.name);
      if (it == L.fn_addr.end()) unresolved("function");
      value = std::int64_t(it->second) + s.addend;
      code_relative = true;
      break;
    }
    case SymRef::Kind::Global: {
      auto it = L.global_addr.find(s.name);
      if (it == L.global_addr.end()) unresolved("global");
      value = std::int64_t(it->second) - opts.data_base + s.addend;
      break;
    }
    case SymRef::Kind::None:
      break;
  }
  if (code_relative) {
    std::int64_t delta = value - std::int64_t(pc);
    if (delta % 4 != 0) throw Error(ErrorCode::InvalidArgument, "misaligned code target in " + f.name);
    value = delta / 4;
  }
  out.sym = {};
  out.imm = std::int32_t(value);
  return out;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) { append_le32(out, v); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    auto v = load_le32(b_.data() + pos_);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(b_.begin() + pos_, b_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > b_.size()) throw Error(ErrorCode::InvalidImage, "truncated image");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t padded_sensitive_size(std::uint32_t size) {
  if (size == 0) return 0;
  std::uint32_t region = std::max<std::uint32_t>(32, std::bit_ceil(size));
  if (region < 256) return region;
  std::uint32_t sub = region / 8;
  return (size + sub - 1) / sub * sub;
}

std::optional<std::uint32_t> FlatImage::symbol(std::string_view name) const {
  for (const auto& s : symbols) {
    if (s.name == name) return s.start;
  }
  return std::nullopt;
}

const ImageSymbol* FlatImage::find(std::string_view name, SymbolKind kind) const {
  for (const auto& s : symbols) {
    if (s.kind == kind && s.name == name) return &s;
  }
  return nullptr;
}

const ImageSymbol* FlatImage::function_at(std::uint32_t addr) const {
  for (const auto& s : symbols) {
    if (s.kind == SymbolKind::Function && addr >= s.start && addr < s.end) return &s;
  }
  return nullptr;
}

std::map<std::string, std::pair<std::uint32_t, std::uint32_t>> FlatImage::function_ranges() const {
  std::map<std::string, std::pair<std::uint32_t, std::uint32_t>> out;
  for (const auto& s : symbols) {
    if (s.kind == SymbolKind::Function) out[s.name] = {s.start, s.end};
  }
  return out;
}

std::map<std::string, std::uint32_t> FlatImage::symbol_table() const {
  std::map<std::string, std::uint32_t> out;
  for (const auto& s : symbols) {
    if (s.kind == SymbolKind::Function || s.kind == SymbolKind::Global) out[s.name] = s.start;
  }
  return out;
}

std::optional<std::pair<std::uint32_t, std::uint32_t>> FlatImage::sensitive_section() const {
  if (const auto* s = find(kSensitiveSection, SymbolKind::Section)) return std::pair{s->start, s->end};
  return std::nullopt;
}

std::uint32_t FlatImage::word_at(std::uint32_t addr) const {
  return load_le32(code.data() + (addr - flash_base));
}

FlatImage encode(const FirmwareModule& m, const LayoutOptions& opts) {
  m.validate();
  Layout L = compute_layout(m, opts);
  if (std::uint64_t(L.code_end) - opts.flash_base > opts.flash_size) {
    throw Error(ErrorCode::ImageOverflow, "code needs " + std::to_string(L.code_end - opts.flash_base) +
                                              " bytes, flash holds " + std::to_string(opts.flash_size));
  }

  FlatImage img;
  img.flash_base = opts.flash_base;
  img.data_base = opts.data_base;
  img.data_size = L.data_size;
  img.flags = opts.flags;
  img.code.assign(L.code_end - opts.flash_base, 0);

  for (const auto* f : L.order) {
    std::uint32_t pc = L.fn_addr.at(f->name);
    const std::uint32_t start = pc;
    for (const auto& b : f->blocks) {
      for (const auto& in : b.insns) {
        store_le32(&img.code[pc - opts.flash_base], encode(resolve(in, *f, pc, L, opts)));
        pc += 4;
      }
    }
    std::uint8_t flags = (f->is_sensitive ? kFnSensitive : 0) | (f->protected_by_ssp ? kFnSsp : 0) |
                         (f->is_init ? kFnInit : 0) | (f->is_lock ? kFnLock : 0);
    img.symbols.push_back({SymbolKind::Function, flags, f->name, start, pc, start + 4 * body_index(*f)});
  }

  if (L.sensitive_padded > opts.flash_base) {
    img.symbols.push_back({SymbolKind::Section, 0, std::string(kSensitiveSection), opts.flash_base,
                           L.sensitive_padded, L.sensitive_end});
  }
  if (L.sensitive_padded > L.sensitive_end) {
    for (std::uint32_t a = L.sensitive_end; a < L.sensitive_padded; a += 4) {
      store_le32(&img.code[a - opts.flash_base], encode(trap(0xFFFF)));
    }
    img.symbols.push_back({SymbolKind::Padding, 0, std::string(kSensitivePadding), L.sensitive_end,
                           L.sensitive_padded, 0});
  }

  img.data_init.assign(L.data_size, 0);
  for (const auto& g : m.globals) {
    std::uint32_t a = L.global_addr.at(g.name);
    std::copy(g.init.begin(), g.init.end(), img.data_init.begin() + (a - opts.data_base));
    img.symbols.push_back({SymbolKind::Global, 0, g.name, a, a + g.size, 0});
  }
  for (const auto* f : L.order) {
    for (const auto& l : f->locals) {
      img.symbols.push_back({SymbolKind::Local, std::uint8_t(l.kind), f->name + "." + l.name,
                             std::uint32_t(l.offset), std::uint32_t(l.offset) + l.size, f->frame_size()});
    }
  }
  img.entry = L.fn_addr.at(m.entry);
  return img;
}

std::vector<Instruction> resolved_instructions(const FirmwareModule& m, std::string_view function,
                                               const LayoutOptions& opts) {
  Layout L = compute_layout(m, opts);
  const FunctionDef* f = m.find(function);
  if (!f) throw Error(ErrorCode::InvalidArgument, "no function " + std::string(function));
  std::vector<Instruction> out;
  std::uint32_t pc = L.fn_addr.at(f->name);
  for (const auto& b : f->blocks) {
    for (const auto& in : b.insns) {
      out.push_back(resolve(in, *f, pc, L, opts));
      pc += 4;
    }
  }
  return out;
}

std::vector<DecodedFunction> decode_image(const FlatImage& image) {
  std::vector<DecodedFunction> out;
  for (const auto& s : image.symbols) {
    if (s.kind != SymbolKind::Function) continue;
    DecodedFunction df{s.name, s.flags, s.start, {}};
    for (std::uint32_t a = s.start; a < s.end; a += 4) {
      auto in = decode(image.word_at(a));
      if (!in) {
        std::ostringstream os;
        os << "undecodable word at 0x" << std::hex << a << " in " << s.name;
        throw Error(ErrorCode::InvalidImage, os.str());
      }
      df.insns.push_back(*in);
    }
    out.push_back(std::move(df));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  return out;
}

std::vector<std::uint8_t> serialize(const FlatImage& image) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, image.flash_base);
  put_u32(out, image.entry);
  put_u32(out, image.data_base);
  put_u32(out, image.data_size);
  put_u32(out, image.flags);
  put_u32(out, std::uint32_t(image.symbols.size()));
  for (const auto& s : image.symbols) {
    if (s.name.size() > 255) throw Error(ErrorCode::InvalidArgument, "symbol name too long: " + s.name);
    out.push_back(std::uint8_t(s.kind));
    out.push_back(s.flags);
    out.push_back(std::uint8_t(s.name.size()));
    out.insert(out.end(), s.name.begin(), s.name.end());
    put_u32(out, s.start);
    put_u32(out, s.end);
    put_u32(out, s.aux);
  }
  put_u32(out, std::uint32_t(image.code.size()));
  out.insert(out.end(), image.code.begin(), image.code.end());
  put_u32(out, std::uint32_t(image.data_init.size()));
  out.insert(out.end(), image.data_init.begin(), image.data_init.end());
  return out;
}

FlatImage parse_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw Error(ErrorCode::InvalidImage, "bad magic");
  }
  Reader r(bytes.subspan(4));
  FlatImage img;
  img.flash_base = r.u32();
  img.entry = r.u32();
  img.data_base = r.u32();
  img.data_size = r.u32();
  img.flags = r.u32();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    ImageSymbol s;
    s.kind = SymbolKind(r.u8());
    s.flags = r.u8();
    auto len = r.u8();
    auto name = r.bytes(len);
    s.name.assign(name.begin(), name.end());
    s.start = r.u32();
    s.end = r.u32();
    s.aux = r.u32();
    img.symbols.push_back(std::move(s));
  }
  img.code = r.bytes(r.u32());
  img.data_init = r.bytes(r.u32());
  if (!r.done()) throw Error(ErrorCode::InvalidImage, "trailing bytes after image");
  if (img.code.size() % 4 != 0) throw Error(ErrorCode::InvalidImage, "code size not word aligned");
  return img;
}

void write_image_file(const std::string& path, const FlatImage& image) {
  auto bytes = serialize(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

FlatImage read_image_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_image(bytes);
}

std::string symbol_map(const FlatImage& image) {
  static const char* kinds[] = {"?", "func", "data", "local", "pad", "section"};
  std::ostringstream os;
  os << "# entry 0x" << std::hex << std::setw(8) << std::setfill('0') << image.entry << "\n";
  for (const auto& s : image.symbols) {
    os << std::hex << std::setw(8) << std::setfill('0') << s.start << " " << std::dec << std::setw(6)
       << std::setfill(' ') << (s.end - s.start) << " " << std::setw(7) << kinds[int(s.kind) % 6] << " "
       << s.name << "\n";
  }
  return os.str();
}

}  // namespace uarmor::fw
