//! Planar geography: cluster point locations, administrative/zip polygons,
//! and the containment relation between them.
//!
//! Coordinates are projected planar meters, not degrees — displacement adds
//! meters to x/y directly, so inputs must be pre-projected. Polygons are
//! simple rings (one outer ring, optional holes); containment uses even-odd
//! ray casting with boundary points counting as *inside*, so that displacement
//! rejection loops terminate for clusters sitting exactly on an area edge.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};

/// A planar point in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    /// Easting in meters.
    pub x: f64,
    /// Northing in meters.
    pub y: f64,
}

impl Point {
    /// Construct a point.
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A simple polygon: one outer ring plus optional holes. Rings need not be
/// explicitly closed (the segment last→first is implied).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    /// Outer boundary vertices.
    pub outer: Vec<Point>,
    /// Hole rings.
    pub holes: Vec<Vec<Point>>,
}

impl Polygon {
    /// A polygon with no holes.
    pub fn new(outer: Vec<Point>) -> Result<Self> {
        Self::with_holes(outer, Vec::new())
    }

    /// A polygon with holes.
    pub fn with_holes(outer: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Self> {
        let poly = Polygon { outer, holes };
        poly.validate()?;
        Ok(poly)
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon {
            outer: vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
            holes: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.outer.len() < 3 {
            return Err(Error::DegeneratePolygon(format!(
                "outer ring has {} vertices",
                self.outer.len()
            )));
        }
        if ring_area(&self.outer).abs() <= 0.0 {
            return Err(Error::DegeneratePolygon("outer ring has zero area".into()));
        }
        for (i, h) in self.holes.iter().enumerate() {
            if h.len() < 3 {
                return Err(Error::DegeneratePolygon(format!(
                    "hole {i} has {} vertices",
                    h.len()
                )));
            }
        }
        Ok(())
    }

    /// Even-odd containment test; boundary points count as inside.
    pub fn contains(&self, p: &Point) -> bool {
        // Boundary of the outer ring or of any hole: inside by convention
        // (ties broken toward acceptance).
        if on_ring_boundary(&self.outer, p) || self.holes.iter().any(|h| on_ring_boundary(h, p)) {
            return true;
        }
        let mut inside = ray_cast(&self.outer, p);
        for hole in &self.holes {
            if ray_cast(hole, p) {
                inside = !inside;
            }
        }
        inside
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bbox(&self) -> (Point, Point) {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.outer {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        (min, max)
    }
}

/// Signed area of a ring (shoelace formula).
fn ring_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// True when `p` lies on a segment of `ring` (within a meter-scale epsilon).
fn on_ring_boundary(ring: &[Point], p: &Point) -> bool {
    const EPS: f64 = 1e-9;
    let n = ring.len();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        let (abx, aby) = (b.x - a.x, b.y - a.y);
        let (apx, apy) = (p.x - a.x, p.y - a.y);
        let cross = abx * apy - aby * apx;
        let len2 = abx * abx + aby * aby;
        if cross.abs() > EPS * len2.sqrt().max(1.0) {
            continue;
        }
        let dot = apx * abx + apy * aby;
        if dot >= -EPS && dot <= len2 + EPS {
            return true;
        }
    }
    false
}

/// Even-odd ray cast (excluding the boundary, handled separately).
fn ray_cast(ring: &[Point], p: &Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = ring[i];
        let b = ring[j];
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Free-function form of the containment test.
pub fn point_in_polygon(p: &Point, poly: &Polygon) -> bool {
    poly.contains(p)
}

/// Cluster point locations, administrative and zip polygons, and the derived
/// containment relation. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GeoContext {
    cluster_points: BTreeMap<String, Point>,
    admin_areas: BTreeMap<String, Polygon>,
    zip_areas: BTreeMap<String, Polygon>,
    /// cluster id → (admin id, zip id) containing its point.
    containment: BTreeMap<String, (String, String)>,
}

impl GeoContext {
    /// Build and validate: every cluster point must lie inside exactly one
    /// admin area and exactly one zip area.
    pub fn new(
        cluster_points: BTreeMap<String, Point>,
        admin_areas: BTreeMap<String, Polygon>,
        zip_areas: BTreeMap<String, Polygon>,
    ) -> Result<Self> {
        let mut containment = BTreeMap::new();
        for (cid, p) in &cluster_points {
            let admins: Vec<&String> = admin_areas
                .iter()
                .filter(|(_, poly)| poly.contains(p))
                .map(|(id, _)| id)
                .collect();
            let zips: Vec<&String> = zip_areas
                .iter()
                .filter(|(_, poly)| poly.contains(p))
                .map(|(id, _)| id)
                .collect();
            if admins.len() != 1 || zips.len() != 1 {
                return Err(Error::SpecInvalid(format!(
                    "cluster {cid} at ({}, {}) lies in {} admin areas and {} zip areas; \
                     expected exactly one of each",
                    p.x,
                    p.y,
                    admins.len(),
                    zips.len()
                )));
            }
            containment.insert(cid.clone(), (admins[0].clone(), zips[0].clone()));
        }
        Ok(GeoContext {
            cluster_points,
            admin_areas,
            zip_areas,
            containment,
        })
    }

    /// All cluster points.
    pub fn cluster_points(&self) -> &BTreeMap<String, Point> {
        &self.cluster_points
    }

    /// All admin polygons.
    pub fn admin_areas(&self) -> &BTreeMap<String, Polygon> {
        &self.admin_areas
    }

    /// All zip polygons.
    pub fn zip_areas(&self) -> &BTreeMap<String, Polygon> {
        &self.zip_areas
    }

    /// Point of a cluster.
    pub fn cluster_point(&self, cluster: &str) -> Result<Point> {
        self.cluster_points
            .get(cluster)
            .copied()
            .ok_or_else(|| Error::UnknownCluster(cluster.to_string()))
    }

    /// Admin area containing a cluster's point.
    pub fn admin_of(&self, cluster: &str) -> Result<&str> {
        self.containment
            .get(cluster)
            .map(|(a, _)| a.as_str())
            .ok_or_else(|| Error::UnknownCluster(cluster.to_string()))
    }

    /// Zip area containing a cluster's point.
    pub fn zip_of(&self, cluster: &str) -> Result<&str> {
        self.containment
            .get(cluster)
            .map(|(_, z)| z.as_str())
            .ok_or_else(|| Error::UnknownCluster(cluster.to_string()))
    }

    /// First zip polygon containing `p` (linear scan in id order).
    pub fn find_zip(&self, p: &Point) -> Option<&str> {
        self.zip_areas
            .iter()
            .find(|(_, poly)| poly.contains(p))
            .map(|(id, _)| id.as_str())
    }

    /// Read a GeoJSON FeatureCollection written by [`GeoContext::to_geojson_file`]:
    /// polygon features carry `{"area_id", "level": "admin"|"zip"}`, point
    /// features carry `{"cluster_id"}`. Coordinates are planar meters.
    pub fn from_geojson_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io("read", path, e))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| Error::io("parse", path, e))?;
        let features = doc["features"]
            .as_array()
            .ok_or_else(|| Error::ParseError("GeoJSON: features is not an array".into()))?;

        let mut cluster_points = BTreeMap::new();
        let mut admin_areas = BTreeMap::new();
        let mut zip_areas = BTreeMap::new();

        for f in features {
            let geom = &f["geometry"];
            let props = &f["properties"];
            match geom["type"].as_str() {
                Some("Point") => {
                    let id = props["cluster_id"]
                        .as_str()
                        .ok_or_else(|| {
                            Error::ParseError("GeoJSON point without cluster_id".into())
                        })?
                        .to_string();
                    let c = coord_pair(&geom["coordinates"])?;
                    cluster_points.insert(id, c);
                }
                Some("Polygon") => {
                    let id = props["area_id"]
                        .as_str()
                        .ok_or_else(|| Error::ParseError("GeoJSON polygon without area_id".into()))?
                        .to_string();
                    let level = props["level"].as_str().unwrap_or("");
                    let rings = geom["coordinates"].as_array().ok_or_else(|| {
                        Error::ParseError("GeoJSON polygon without coordinate rings".into())
                    })?;
                    let mut parsed: Vec<Vec<Point>> = Vec::new();
                    for ring in rings {
                        let pts = ring
                            .as_array()
                            .ok_or_else(|| Error::ParseError("GeoJSON ring not an array".into()))?;
                        let mut out = Vec::with_capacity(pts.len());
                        for pt in pts {
                            out.push(coord_pair(pt)?);
                        }
                        // GeoJSON closes rings explicitly; we imply closure.
                        if out.len() >= 2 && out.first() == out.last() {
                            out.pop();
                        }
                        parsed.push(out);
                    }
                    let mut rings_iter = parsed.into_iter();
                    let outer = rings_iter.next().unwrap_or_default();
                    let poly = Polygon::with_holes(outer, rings_iter.collect())?;
                    match level {
                        "admin" => {
                            admin_areas.insert(id, poly);
                        }
                        "zip" => {
                            zip_areas.insert(id, poly);
                        }
                        other => {
                            return Err(Error::ParseError(format!(
                                "GeoJSON polygon {id}: unknown level {other:?}"
                            )))
                        }
                    }
                }
                other => {
                    return Err(Error::ParseError(format!(
                        "GeoJSON: unsupported geometry type {other:?}"
                    )))
                }
            }
        }
        GeoContext::new(cluster_points, admin_areas, zip_areas)
    }

    /// Write the context as a GeoJSON FeatureCollection (see
    /// [`GeoContext::from_geojson_file`] for the property conventions).
    pub fn to_geojson_file(&self, path: &Path) -> Result<()> {
        let mut features = Vec::new();
        for (level, areas) in [("admin", &self.admin_areas), ("zip", &self.zip_areas)] {
            for (id, poly) in areas {
                let mut rings = vec![ring_json(&poly.outer)];
                for h in &poly.holes {
                    rings.push(ring_json(h));
                }
                features.push(json!({
                    "type": "Feature",
                    "properties": {"area_id": id, "level": level},
                    "geometry": {"type": "Polygon", "coordinates": rings},
                }));
            }
        }
        for (id, p) in &self.cluster_points {
            features.push(json!({
                "type": "Feature",
                "properties": {"cluster_id": id},
                "geometry": {"type": "Point", "coordinates": [p.x, p.y]},
            }));
        }
        let doc = json!({"type": "FeatureCollection", "features": features});
        let text = serde_json::to_string_pretty(&doc).expect("geojson serializes");
        std::fs::write(path, text).map_err(|e| Error::io("write", path, e))
    }
}

fn coord_pair(v: &Value) -> Result<Point> {
    let arr = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| Error::ParseError("GeoJSON coordinate is not an [x, y] pair".into()))?;
    let x = arr[0]
        .as_f64()
        .ok_or_else(|| Error::ParseError("GeoJSON coordinate x is not a number".into()))?;
    let y = arr[1]
        .as_f64()
        .ok_or_else(|| Error::ParseError("GeoJSON coordinate y is not a number".into()))?;
    Ok(Point::new(x, y))
}

fn ring_json(ring: &[Point]) -> Value {
    let mut coords: Vec<Value> = ring.iter().map(|p| json!([p.x, p.y])).collect();
    if let Some(first) = ring.first() {
        coords.push(json!([first.x, first.y]));
    }
    Value::Array(coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Polygon {
        Polygon::rect(0.0, 0.0, 1.0, 1.0)
    }

    #[test]
    fn interior_point_inside() {
        assert!(unit_square().contains(&Point::new(0.5, 0.5)));
    }

    #[test]
    fn exterior_point_outside() {
        assert!(!unit_square().contains(&Point::new(2.0, 2.0)));
    }

    #[test]
    fn boundary_points_count_as_inside() {
        let sq = unit_square();
        assert!(sq.contains(&Point::new(0.0, 0.5)));
        assert!(sq.contains(&Point::new(0.0, 0.0)));
        assert!(sq.contains(&Point::new(1.0, 1.0)));
        assert!(sq.contains(&Point::new(0.5, 1.0)));
    }

    #[test]
    fn degenerate_polygon_rejected() {
        assert!(Polygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]).is_err());
        assert!(Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0)
        ])
        .is_err());
    }

    #[test]
    fn holes_punch_out_interior() {
        let poly = Polygon::with_holes(
            vec![
                Point::new(0.0, 0.0),
                Point::new(10.0, 0.0),
                Point::new(10.0, 10.0),
                Point::new(0.0, 10.0),
            ],
            vec![vec![
                Point::new(4.0, 4.0),
                Point::new(6.0, 4.0),
                Point::new(6.0, 6.0),
                Point::new(4.0, 6.0),
            ]],
        )
        .unwrap();
        assert!(poly.contains(&Point::new(1.0, 1.0)));
        assert!(!poly.contains(&Point::new(5.0, 5.0)));
        // Hole boundary still counts as inside (tie toward acceptance).
        assert!(poly.contains(&Point::new(4.0, 5.0)));
    }

    #[test]
    fn concave_polygon() {
        // L-shape: the notch at (1.5, 1.5) is outside.
        let l = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 2.0),
            Point::new(0.0, 2.0),
        ])
        .unwrap();
        assert!(l.contains(&Point::new(0.5, 1.5)));
        assert!(l.contains(&Point::new(1.5, 0.5)));
        assert!(!l.contains(&Point::new(1.5, 1.5)));
    }

    fn toy_context() -> GeoContext {
        let mut clusters = BTreeMap::new();
        clusters.insert("c1".to_string(), Point::new(1.0, 1.0));
        clusters.insert("c2".to_string(), Point::new(5.0, 1.0));
        let mut admins = BTreeMap::new();
        admins.insert("a1".to_string(), Polygon::rect(0.0, 0.0, 8.0, 2.0));
        let mut zips = BTreeMap::new();
        zips.insert("z1".to_string(), Polygon::rect(0.0, 0.0, 4.0, 2.0));
        zips.insert("z2".to_string(), Polygon::rect(4.0, 0.0, 8.0, 2.0));
        GeoContext::new(clusters, admins, zips).unwrap()
    }

    #[test]
    fn containment_derived_per_cluster() {
        let g = toy_context();
        assert_eq!(g.zip_of("c1").unwrap(), "z1");
        assert_eq!(g.zip_of("c2").unwrap(), "z2");
        assert_eq!(g.admin_of("c1").unwrap(), "a1");
        assert!(g.zip_of("missing").is_err());
        assert_eq!(g.find_zip(&Point::new(6.0, 1.0)), Some("z2"));
        assert_eq!(g.find_zip(&Point::new(100.0, 100.0)), None);
    }

    #[test]
    fn cluster_outside_every_zip_rejected() {
        let mut clusters = BTreeMap::new();
        clusters.insert("c1".to_string(), Point::new(50.0, 50.0));
        let mut admins = BTreeMap::new();
        admins.insert("a1".to_string(), Polygon::rect(0.0, 0.0, 100.0, 100.0));
        let zips = BTreeMap::new();
        assert!(GeoContext::new(clusters, admins, zips).is_err());
    }

    #[test]
    fn geojson_roundtrip() {
        let g = toy_context();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geo.json");
        g.to_geojson_file(&path).unwrap();
        let back = GeoContext::from_geojson_file(&path).unwrap();
        assert_eq!(back.cluster_points(), g.cluster_points());
        assert_eq!(back.zip_areas(), g.zip_areas());
        assert_eq!(back.admin_of("c2").unwrap(), "a1");
    }
}
