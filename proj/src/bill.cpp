#include "dvcg/bill.hpp"

#include "dvcg/errors.hpp"

#include "json.hpp"

#include <numeric>
#include <ostream>

namespace dvcg {

using ordered_json = nlohmann::ordered_json;

void Bill::WindowMax::push(std::size_t seq, double value)
{
  while (!entries.empty() && entries.back().second <= value)
  {
    entries.pop_back();
  }
  entries.emplace_back(seq, value);
}

void Bill::WindowMax::evict_before(std::size_t seq)
{
  while (!entries.empty() && entries.front().first < seq)
  {
    entries.pop_front();
  }
}

Bill::Bill(std::size_t capacity, double utility_floor)
  : capacity_(capacity)
  , utility_floor_(utility_floor)
{
  if (capacity_ == 0)
  {
    throw ValidationError("bill capacity must be positive");
  }
}

void Bill::track(BillRecord const &record, std::size_t seq)
{
  if (record.report.empty())
  {
    return;
  }
  auto const &u = record.report.utilities;
  auto const &g = record.report.gross_profits;
  if (others_max_.empty())
  {
    others_max_.resize(u.size());
    ratios_.resize(u.size());
  }
  if (u.size() != others_max_.size() || g.size() != u.size())
  {
    throw ValidationError("bill: financial report width changed");
  }
  double const total = std::accumulate(u.begin(), u.end(), 0.0);
  welfare_max_.push(seq, total);
  for (std::size_t i = 0; i < u.size(); ++i)
  {
    others_max_[i].push(seq, total - u[i]);
    if (u[i] > utility_floor_)
    {
      ratios_[i].sum += g[i] / u[i];
      ++ratios_[i].count;
    }
  }
  ++reports_;
}

void Bill::untrack(BillRecord const &record)
{
  if (record.report.empty())
  {
    return;
  }
  auto const &u = record.report.utilities;
  auto const &g = record.report.gross_profits;
  for (std::size_t i = 0; i < u.size(); ++i)
  {
    if (u[i] > utility_floor_)
    {
      ratios_[i].sum -= g[i] / u[i];
      --ratios_[i].count;
    }
  }
  --reports_;
}

void Bill::append(BillRecord record)
{
  std::size_t const seq = appended_++;
  track(record, seq);
  records_.push_back(std::move(record));
  if (records_.size() > capacity_)
  {
    untrack(records_.front());
    records_.pop_front();
    std::size_t const first = appended_ - records_.size();
    welfare_max_.evict_before(first);
    for (auto &w : others_max_)
    {
      w.evict_before(first);
    }
  }
}

BillStats Bill::stats() const
{
  if (reports_ == 0)
  {
    throw ColdStartError("bill holds no financial reports yet");
  }
  BillStats out;
  out.welfare_max = welfare_max_.top();
  out.reports     = reports_;
  out.others_max.reserve(others_max_.size());
  for (auto const &w : others_max_)
  {
    out.others_max.push_back(w.top());
  }
  return out;
}

double Bill::alpha_estimate(int vsp) const
{
  if (vsp < 0 || static_cast<std::size_t>(vsp) >= ratios_.size() || ratios_[vsp].count == 0)
  {
    throw ColdStartError("no qualifying financial reports for vsp " + std::to_string(vsp));
  }
  return ratios_[vsp].sum / static_cast<double>(ratios_[vsp].count);
}

bool Bill::has_transition(std::size_t i) const
{
  return i + 1 < records_.size() && !records_[i + 1].episode_start;
}

namespace {

ordered_json matrix_to_json(Eigen::Matrix3Xd const &m)
{
  ordered_json rows = ordered_json::array();
  for (int r = 0; r < m.rows(); ++r)
  {
    std::vector<double> row(m.cols());
    for (int c = 0; c < m.cols(); ++c)
    {
      row[c] = m(r, c);
    }
    rows.push_back(row);
  }
  return rows;
}

Eigen::Matrix3Xd matrix_from_json(ordered_json const &j)
{
  if (!j.is_array() || j.size() != kResources)
  {
    throw ValidationError("bill: allocation must have 3 rows");
  }
  std::size_t const n = j[0].size();
  Eigen::Matrix3Xd  m(kResources, static_cast<Eigen::Index>(n));
  for (int r = 0; r < kResources; ++r)
  {
    if (j[r].size() != n)
    {
      throw ValidationError("bill: ragged allocation rows");
    }
    for (std::size_t c = 0; c < n; ++c)
    {
      m(r, static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

}  // namespace

void write_record(std::ostream &out, BillRecord const &record)
{
  ordered_json j;
  j["round"]               = record.round;
  j["episode"]             = record.episode;
  j["episode_start"]       = record.episode_start;
  j["warmup"]              = record.warmup;
  j["observation"]         = matrix_to_json(record.observation);
  j["actions"]             = record.actions;
  j["allocation"]          = matrix_to_json(record.allocation);
  j["bids"]                = record.bids;
  j["loans"]               = record.loans;
  j["estimated_utilities"] = record.estimated_utilities;
  j["impacts"]             = record.impacts;
  j["interests"]           = record.interests;
  j["taxes"]               = record.taxes;
  j["pool"]                = record.pool;
  j["sw_star"]             = record.sw_star;
  if (record.report.empty())
  {
    j["report"] = nullptr;
  }
  else
  {
    j["report"] = {{"round", record.report.round},
                   {"utilities", record.report.utilities},
                   {"gross_profits", record.report.gross_profits}};
  }
  out << j.dump() << '\n';
}

BillRecord read_record(std::string const &line)
{
  try
  {
    auto const j = ordered_json::parse(line);
    BillRecord r;
    r.round               = j.at("round").get<int>();
    r.episode             = j.at("episode").get<int>();
    r.episode_start       = j.at("episode_start").get<bool>();
    r.warmup              = j.at("warmup").get<bool>();
    r.observation         = matrix_from_json(j.at("observation"));
    r.actions             = j.at("actions").get<std::vector<ActionIndex>>();
    r.allocation          = matrix_from_json(j.at("allocation"));
    r.bids                = j.at("bids").get<std::vector<double>>();
    r.loans               = j.at("loans").get<std::vector<double>>();
    r.estimated_utilities = j.at("estimated_utilities").get<std::vector<double>>();
    r.impacts             = j.at("impacts").get<std::vector<double>>();
    r.interests           = j.at("interests").get<std::vector<double>>();
    r.taxes               = j.at("taxes").get<std::vector<double>>();
    r.pool                = j.at("pool").get<double>();
    r.sw_star             = j.at("sw_star").get<double>();
    auto const &rep       = j.at("report");
    if (!rep.is_null())
    {
      r.report.round         = rep.at("round").get<int>();
      r.report.utilities     = rep.at("utilities").get<std::vector<double>>();
      r.report.gross_profits = rep.at("gross_profits").get<std::vector<double>>();
    }
    return r;
  }
  catch (nlohmann::json::exception const &e)
  {
    throw ValidationError(std::string("bill record: ") + e.what());
  }
}

}  // namespace dvcg
