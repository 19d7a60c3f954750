//! Well-Known Text reader and writer for POINT, LINESTRING and single-ring POLYGON.

use super::geometry::{Coord, Geometry, GeometryKind};
use super::IngestError;

const UNSUPPORTED: &[&str] = &[
    "MULTIPOINT",
    "MULTILINESTRING",
    "MULTIPOLYGON",
    "GEOMETRYCOLLECTION",
    "TRIANGLE",
    "TIN",
    "POLYHEDRALSURFACE",
    "CIRCULARSTRING",
    "COMPOUNDCURVE",
    "CURVEPOLYGON",
];

/// Parses a WKT literal.
pub fn parse_wkt(text: &str) -> Result<Geometry, IngestError> {
    let mut p = Parser { src: text, pos: 0 };
    p.skip_ws();
    let start = p.pos;
    let word = p.keyword().to_string();
    if word.is_empty() {
        return Err(p.error("expected geometry keyword"));
    }
    let upper = word.to_ascii_uppercase();
    let kind = match upper.as_str() {
        "POINT" => GeometryKind::Point,
        "LINESTRING" => GeometryKind::LineString,
        "POLYGON" => GeometryKind::Polygon,
        other if UNSUPPORTED.contains(&other) => {
            return Err(IngestError::UnsupportedWkt(other.to_string()))
        }
        _ => {
            return Err(IngestError::WktSyntax {
                pos: start,
                msg: format!("unknown geometry keyword '{word}'"),
            })
        }
    };
    p.skip_ws();
    let dim = p.keyword().to_string();
    if !dim.is_empty() {
        let d = dim.to_ascii_uppercase();
        return Err(match d.as_str() {
            "Z" | "M" | "ZM" => IngestError::UnsupportedWkt(format!("{upper} {d}")),
            "EMPTY" => IngestError::UnsupportedWkt(format!("{upper} EMPTY")),
            _ => p.error(&format!("unexpected token '{dim}'")),
        });
    }
    let coords = match kind {
        GeometryKind::Point => {
            p.expect('(')?;
            let c = p.coord()?;
            p.expect(')')?;
            vec![c]
        }
        GeometryKind::LineString => p.coord_list()?,
        GeometryKind::Polygon => {
            p.expect('(')?;
            let ring = p.coord_list()?;
            p.skip_ws();
            if p.peek() == Some(',') {
                return Err(IngestError::UnsupportedWkt("POLYGON with interior rings".into()));
            }
            p.expect(')')?;
            ring
        }
    };
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing characters after geometry"));
    }
    Geometry::new(kind, coords)
}

/// Canonical WKT text; `parse_wkt(&emit_wkt(g)) == g` bit for bit.
pub fn emit_wkt(g: &Geometry) -> String {
    let body = g
        .coords()
        .iter()
        .map(|c| format!("{} {}", c.lon, c.lat))
        .collect::<Vec<_>>()
        .join(", ");
    match g.kind() {
        GeometryKind::Point => format!("POINT ({body})"),
        GeometryKind::LineString => format!("LINESTRING ({body})"),
        GeometryKind::Polygon => format!("POLYGON (({body}))"),
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn keyword(&mut self) -> &str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphabetic() {
                self.pos += 1;
            } else {
                break;
            }
        }
        &self.src[start..self.pos]
    }

    fn error(&self, msg: &str) -> IngestError {
        IngestError::WktSyntax { pos: self.pos, msg: msg.to_string() }
    }

    fn expect(&mut self, ch: char) -> Result<(), IngestError> {
        self.skip_ws();
        if self.peek() == Some(ch) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected '{ch}'")))
        }
    }

    fn number(&mut self) -> Result<f64, IngestError> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let tok = &self.src[start..self.pos];
        if tok.is_empty() {
            return Err(self.error("expected number"));
        }
        tok.parse::<f64>().map_err(|_| IngestError::WktSyntax {
            pos: start,
            msg: format!("invalid number '{tok}'"),
        })
    }

    fn coord(&mut self) -> Result<Coord, IngestError> {
        let lon = self.number()?;
        let lat = self.number()?;
        self.skip_ws();
        if matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.') {
            return Err(IngestError::UnsupportedWkt("coordinates with more than 2 dimensions".into()));
        }
        Ok(Coord { lon, lat })
    }

    fn coord_list(&mut self) -> Result<Vec<Coord>, IngestError> {
        self.expect('(')?;
        let mut out = vec![self.coord()?];
        loop {
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.pos += 1;
                    out.push(self.coord()?);
                }
                Some(')') => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(self.error("expected ',' or ')'")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_point() {
        let g = parse_wkt("POINT (51.4 35.7)").unwrap();
        assert_eq!(g.kind(), GeometryKind::Point);
        assert_eq!(g.coords(), &[Coord::new(51.4, 35.7)]);
    }

    #[test]
    fn parses_minimal_polygon() {
        let g = parse_wkt("POLYGON ((0 0, 1 0, 1 1, 0 0))").unwrap();
        assert_eq!(g.kind(), GeometryKind::Polygon);
        assert_eq!(g.coords().len(), 4);
        assert_eq!(g.coords()[0], g.coords()[3]);
    }

    #[test]
    fn unclosed_ring_is_an_error() {
        assert!(matches!(
            parse_wkt("POLYGON ((0 0, 1 0, 1 1))"),
            Err(IngestError::UnclosedRing)
        ));
    }

    #[test]
    fn multi_geometries_and_holes_are_unsupported() {
        assert!(matches!(
            parse_wkt("MULTIPOLYGON (((0 0, 1 0, 1 1, 0 0)))"),
            Err(IngestError::UnsupportedWkt(_))
        ));
        assert!(matches!(
            parse_wkt("POLYGON ((0 0, 4 0, 4 4, 0 0), (1 1, 2 1, 2 2, 1 1))"),
            Err(IngestError::UnsupportedWkt(_))
        ));
        assert!(matches!(parse_wkt("POINT Z (1 2 3)"), Err(IngestError::UnsupportedWkt(_))));
        assert!(matches!(parse_wkt("POINT (1 2 3)"), Err(IngestError::UnsupportedWkt(_))));
    }

    #[test]
    fn syntax_errors_report_position() {
        match parse_wkt("LINESTRING (0 0, 1 x)") {
            Err(IngestError::WktSyntax { pos, .. }) => assert_eq!(pos, 19),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_wkt("POINT (1 2) junk"), Err(IngestError::WktSyntax { .. })));
        assert!(matches!(parse_wkt(""), Err(IngestError::WktSyntax { pos: 0, .. })));
    }

    #[test]
    fn keywords_are_case_insensitive() {
        let g = parse_wkt("  linestring(0 0,1.5 -2e-3)  ").unwrap();
        assert_eq!(g.coords()[1], Coord::new(1.5, -0.002));
    }

    fn coord() -> impl Strategy<Value = (f64, f64)> {
        (-180.0f64..=180.0, -90.0f64..=90.0)
    }

    fn geometry() -> impl Strategy<Value = Geometry> {
        prop_oneof![
            coord().prop_map(|(x, y)| Geometry::point(x, y).unwrap()),
            prop::collection::vec(coord(), 2..12)
                .prop_map(|cs| Geometry::line_string(cs).unwrap()),
            prop::collection::vec(coord(), 3..12)
                .prop_map(|cs| Geometry::polygon_from_open_ring(cs).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn emit_then_parse_is_identity(g in geometry()) {
            let text = emit_wkt(&g);
            let back = parse_wkt(&text).unwrap();
            prop_assert_eq!(back.kind(), g.kind());
            for (a, b) in back.coords().iter().zip(g.coords()) {
                prop_assert_eq!(a.lon.to_bits(), b.lon.to_bits());
                prop_assert_eq!(a.lat.to_bits(), b.lat.to_bits());
            }
            prop_assert_eq!(emit_wkt(&back), text);
        }
    }
}
