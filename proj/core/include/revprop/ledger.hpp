#pragma once

#include <cstdint>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "revprop/errors.hpp"

namespace revprop {

/// Byte-accurate accounting of activation storage. Engines report every
/// allocation and release of block/stage-lifetime activation memory
/// through track(); the ledger keeps the running total, the peak, and an
/// event log that tests can replay. Updates are serialized internally,
/// so concurrent lanes may share one ledger.
class MemoryLedger {
 public:
  struct Event {
    std::string tag;
    std::int64_t delta;
  };

  void track(std::string_view tag, std::int64_t delta) {
    std::lock_guard<std::mutex> lock(mu_);
    const std::int64_t next = live_ + delta;
    if (next < 0) {
      throw AccountingError("ledger underflow on '" + std::string(tag) + "': live " +
                            std::to_string(live_) + ", delta " + std::to_string(delta));
    }
    live_ = next;
    if (live_ > peak_) peak_ = live_;
    events_.push_back(Event{std::string(tag), delta});
  }

  std::int64_t live_bytes() const {
    std::lock_guard<std::mutex> lock(mu_);
    return live_;
  }
  std::int64_t peak_bytes() const {
    std::lock_guard<std::mutex> lock(mu_);
    return peak_;
  }
  std::vector<Event> events() const {
    std::lock_guard<std::mutex> lock(mu_);
    return events_;
  }

  void reset() {
    std::lock_guard<std::mutex> lock(mu_);
    live_ = 0;
    peak_ = 0;
    events_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::int64_t live_ = 0;
  std::int64_t peak_ = 0;
  std::vector<Event> events_;
};

inline void ledger_track(MemoryLedger& ledger, std::string_view tag, std::int64_t delta) {
  ledger.track(tag, delta);
}

/// Holds a ledger charge and releases it on destruction (or explicitly).
class LedgerCharge {
 public:
  LedgerCharge() = default;
  LedgerCharge(MemoryLedger* ledger, std::string tag, std::int64_t bytes)
      : ledger_(ledger), tag_(std::move(tag)), bytes_(bytes) {
    if (ledger_ && bytes_ > 0) ledger_->track(tag_, bytes_);
  }
  LedgerCharge(LedgerCharge&& other) noexcept { *this = std::move(other); }
  LedgerCharge& operator=(LedgerCharge&& other) noexcept {
    if (this != &other) {
      release();
      ledger_ = other.ledger_;
      tag_ = std::move(other.tag_);
      bytes_ = other.bytes_;
      other.ledger_ = nullptr;
      other.bytes_ = 0;
    }
    return *this;
  }
  LedgerCharge(const LedgerCharge&) = delete;
  LedgerCharge& operator=(const LedgerCharge&) = delete;
  ~LedgerCharge() { release(); }

  void release() {
    if (ledger_ && bytes_ > 0) ledger_->track(tag_, -bytes_);
    ledger_ = nullptr;
    bytes_ = 0;
  }

  std::int64_t bytes() const { return bytes_; }

 private:
  MemoryLedger* ledger_ = nullptr;
  std::string tag_;
  std::int64_t bytes_ = 0;
};

}  // namespace revprop
