"""Materialized exchange rates and currency conversion.

Rates form a star around a single base currency: rates[C] is how many units
of C one unit of the base buys. Conversion therefore is
amount * rates[target] / rates[source], exact in decimal arithmetic and
rounded half-even to 4 fractional digits only at the end.

The same arithmetic can be pushed into a SPARQL query: conversion_clause()
emits graph patterns that join rate triples and BIND the converted price, so
endpoints holding a rate graph convert server-side. The rate graph pattern is
an assumption of this project (the exchange-rate vocabulary's concrete
property names are configured here, see XRO and the bundled dataset):

    ?entry a xro:ExchangeRate ; xro:currency "USD" ; xro:rate "1.25"^^xsd:decimal .
    ?table a xro:RateTable ; xro:base "EUR" ; xro:asOf "..."^^xsd:dateTime .

Rate files are flat UTF-8 text, one `KEY=value` pair per line:

    base=EUR
    as_of=2026-08-10T00:00:00Z
    EUR=1.0
    USD=1.25

Blank lines and lines starting with `#` are ignored. `base` names the base
currency, `as_of` is an RFC 3339 timestamp, and every other key must be a
3-letter ISO-4217 code mapped to a positive decimal rate. A missing base
self-rate is autocompleted to 1.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Mapping, Optional, Union

from .model import CURRENCY_RE, Money, as_decimal, ensure_utc

XRO = "http://purl.org/xro/ns#"

QUANTUM = Decimal("0.0001")
DEFAULT_MAX_AGE = timedelta(days=7)


class RateTableError(ValueError):
    """Rate source is malformed or inconsistent."""


class StaleRatesError(RateTableError):
    """Rate document is older than the configured maximum age."""


class UnknownCurrencyError(KeyError):
    """Conversion asked for a currency the table does not quote."""


@dataclass(frozen=True)
class RateTable:
    """Exchange rates against one base currency, immutable after load."""

    base: str
    rates: Mapping[str, Decimal]
    as_of: datetime

    def __post_init__(self):
        if not CURRENCY_RE.match(self.base or ""):
            raise RateTableError(f"invalid base currency: {self.base!r}")
        normalized = {}
        for code, rate in dict(self.rates).items():
            if not CURRENCY_RE.match(code or ""):
                raise RateTableError(f"invalid currency code: {code!r}")
            rate = as_decimal(rate)
            if rate <= 0:
                raise RateTableError(f"non-positive rate for {code}: {rate}")
            normalized[code] = rate
        normalized.setdefault(self.base, Decimal(1))
        if normalized[self.base] != 1:
            raise RateTableError(
                f"base {self.base} must have rate 1, got {normalized[self.base]}")
        object.__setattr__(self, "rates", normalized)
        object.__setattr__(self, "as_of", ensure_utc(self.as_of))

    def __contains__(self, code: str) -> bool:
        return code in self.rates


def parse_rfc3339(value: str) -> datetime:
    value = value.strip()
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    try:
        return ensure_utc(datetime.fromisoformat(value))
    except ValueError as exc:
        raise RateTableError(f"invalid as_of timestamp: {value!r}") from exc


def _check_age(table: RateTable, now: Optional[datetime],
               max_age: Optional[timedelta]) -> RateTable:
    if max_age is not None:
        now = ensure_utc(now) if now else datetime.now(timezone.utc)
        if now - table.as_of > max_age:
            raise StaleRatesError(
                f"rates dated {table.as_of.isoformat()} exceed max age {max_age}")
    return table


def parse_rate_file(text: str) -> RateTable:
    base: Optional[str] = None
    as_of: Optional[datetime] = None
    rates: dict[str, Decimal] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise RateTableError(f"line {lineno}: expected KEY=value, got {raw!r}")
        key, value = key.strip(), value.strip()
        if key == "base":
            base = value
        elif key == "as_of":
            as_of = parse_rfc3339(value)
        else:
            try:
                rates[key] = Decimal(value)
            except ArithmeticError as exc:
                raise RateTableError(
                    f"line {lineno}: invalid rate for {key!r}: {value!r}") from exc
    if base is None:
        raise RateTableError("rate document is missing the base= header")
    if as_of is None:
        raise RateTableError("rate document is missing the as_of= header")
    return RateTable(base=base, rates=rates, as_of=as_of)


def _load_rates_from_endpoint(endpoint_url: str, timeout: float) -> RateTable:
    # Imported here: sparql (requests) stays out of pure-arithmetic callers.
    from .sparql import execute

    meta = execute(endpoint_url, (
        f"PREFIX xro: <{XRO}>\n"
        "SELECT ?currency ?price WHERE {\n"
        "  ?table a xro:RateTable .\n"
        "  ?table xro:base ?currency .\n"
        "  ?table xro:asOf ?price .\n"
        "} LIMIT 1"), timeout=timeout)
    if not meta.rows:
        raise RateTableError(f"no rate table metadata at {endpoint_url}")
    base = meta.rows[0]["currency"].value
    as_of = parse_rfc3339(meta.rows[0]["price"].value)

    result = execute(endpoint_url, (
        f"PREFIX xro: <{XRO}>\n"
        "SELECT ?currency ?price WHERE {\n"
        "  ?entry a xro:ExchangeRate .\n"
        "  ?entry xro:currency ?currency .\n"
        "  ?entry xro:rate ?price .\n"
        "} ORDER BY ASC(?currency) LIMIT 100"), timeout=timeout)
    rates = {}
    for row in result.rows:
        rates[row["currency"].value] = Decimal(row["price"].value)
    if not rates:
        raise RateTableError(f"no exchange-rate triples at {endpoint_url}")
    return RateTable(base=base, rates=rates, as_of=as_of)


def load_rates(source: Union[str, Path], *,
               now: Optional[datetime] = None,
               max_age: Optional[timedelta] = DEFAULT_MAX_AGE,
               timeout: float = 10.0) -> RateTable:
    """Load a RateTable from a rate file path or a SPARQL endpoint URL.

    Pass max_age=None to skip the staleness check (callers that prefer
    serving stale rates over failing, e.g. the HTTP service, do this and
    report staleness through their health endpoint instead).
    """
    if isinstance(source, str) and source.startswith(("http://", "https://")):
        table = _load_rates_from_endpoint(source, timeout)
    else:
        path = Path(source)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise RateTableError(f"cannot read rate file {path}: {exc}") from exc
        table = parse_rate_file(text)
    return _check_age(table, now, max_age)


def convert(m: Money, target: str, table: RateTable) -> Money:
    """Convert Money into the target currency, rounding half-even to 4 digits."""
    if m.currency not in table.rates:
        raise UnknownCurrencyError(m.currency)
    if target not in table.rates:
        raise UnknownCurrencyError(target)
    exact = m.amount * table.rates[target] / table.rates[m.currency]
    return Money(exact.quantize(QUANTUM, rounding=ROUND_HALF_EVEN), target)


def conversion_clause(source_price_var: str, target: str,
                      source_currency_var: str = "srcCurrency") -> str:
    """SPARQL patterns binding the converted price for in-query conversion.

    Joins the source currency's and the target's rate entries and BINDs
    ?price = source * rate[target] / rate[source], the same arithmetic as
    convert(); ?currency is re-bound to the target code so query output is
    coherent. Everything else stays in non-projected helper variables, so
    source_price_var / source_currency_var must not be canonical names.
    """
    if not CURRENCY_RE.match(target or ""):
        raise RateTableError(f"invalid target currency: {target!r}")
    for var in (source_price_var, source_currency_var):
        if not re.match(r"^[A-Za-z][A-Za-z0-9_]*$", var or ""):
            raise ValueError(f"invalid variable name: {var!r}")
        if var in ("price", "currency"):
            raise ValueError(f"{var!r} collides with a converted output variable")
    return (
        f"  ?srcRateEntry a xro:ExchangeRate .\n"
        f"  ?srcRateEntry xro:currency ?{source_currency_var} .\n"
        f"  ?srcRateEntry xro:rate ?srcRate .\n"
        f"  ?tgtRateEntry a xro:ExchangeRate .\n"
        f'  ?tgtRateEntry xro:currency "{target}" .\n'
        f"  ?tgtRateEntry xro:rate ?tgtRate .\n"
        f"  BIND(?{source_price_var} * ?tgtRate / ?srcRate AS ?price)\n"
        f'  BIND("{target}" AS ?currency)'
    )
