//! PLY (ASCII and binary) and Wavefront OBJ meshes. Only positions and
//! faces are read; normals are recomputed. Polygons are fan-triangulated.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{TriangleMesh, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// One element record: scalar values in property order, list values
/// collected separately.
struct Record {
    scalars: Vec<f64>,
    lists: Vec<Vec<f64>>,
}

fn parse_header(path: &Path, reader: &mut impl BufRead) -> Result<(PlyEncoding, Vec<Element>, usize)> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<bool> {
        line.clear();
        let n = reader.read_line(line).map_err(|e| Error::io(path, e))?;
        Ok(n > 0)
    };
    if !next(&mut line)? || line.trim() != "ply" {
        return Err(Error::parse(path, 1, "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut n = 1;
    loop {
        if !next(&mut line)? {
            return Err(Error::parse(path, n, "header ends without end_header"));
        }
        n += 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", kind, _version] => {
                encoding = Some(match *kind {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    "binary_big_endian" => PlyEncoding::BinaryBigEndian,
                    other => return Err(Error::parse(path, n, format!("unknown format '{other}'"))),
                })
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(path, n, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", ct, it, name] => {
                let (Some(ct), Some(it)) = (Scalar::parse(ct), Scalar::parse(it)) else {
                    return Err(Error::parse(path, n, "unknown list property type"));
                };
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, n, "property before any element"))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| Error::parse(path, n, format!("unknown property type '{ty}'")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, n, "property before any element"))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(Error::parse(path, n, format!("unexpected header line '{}'", line.trim()))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::parse(path, n, "no format line"))?;
    Ok((encoding, elements, n))
}

fn read_ascii_records(
    path: &Path,
    reader: &mut impl BufRead,
    el: &Element,
    lineno: &mut usize,
) -> Result<Vec<Record>> {
    let mut out = Vec::with_capacity(el.count);
    let mut line = String::new();
    while out.len() < el.count {
        line.clear();
        *lineno += 1;
        if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(Error::parse(path, *lineno, format!("file ends inside element '{}'", el.name)));
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let mut num = |what: &str| -> Result<f64> {
            let t = tokens
                .next()
                .ok_or_else(|| Error::parse(path, *lineno, format!("missing {what}")))?;
            t.parse::<f64>()
                .map_err(|_| Error::parse(path, *lineno, format!("bad number '{t}'")))
        };
        let mut rec = Record {
            scalars: Vec::new(),
            lists: Vec::new(),
        };
        for p in &el.props {
            match p {
                Property::Scalar(name, _) => rec.scalars.push(num(name)?),
                Property::List(name, _, _) => {
                    let k = num(name)? as usize;
                    let items = (0..k).map(|_| num(name)).collect::<Result<Vec<_>>>()?;
                    rec.lists.push(items);
                }
            }
        }
        out.push(rec);
    }
    Ok(out)
}

fn read_binary_records(path: &Path, reader: &mut impl Read, el: &Element, big: bool) -> Result<Vec<Record>> {
    let mut out = Vec::with_capacity(el.count);
    let mut buf = [0u8; 8];
    let mut read = |ty: Scalar| -> Result<f64> {
        let n = ty.size();
        reader
            .read_exact(&mut buf[..n])
            .map_err(|_| Error::format(path, format!("file ends inside element '{}'", el.name)))?;
        Ok(ty.decode(&buf[..n], big))
    };
    for _ in 0..el.count {
        let mut rec = Record {
            scalars: Vec::new(),
            lists: Vec::new(),
        };
        for p in &el.props {
            match p {
                Property::Scalar(_, ty) => rec.scalars.push(read(*ty)?),
                Property::List(_, ct, it) => {
                    let k = read(*ct)? as usize;
                    let items = (0..k).map(|_| read(*it)).collect::<Result<Vec<_>>>()?;
                    rec.lists.push(items);
                }
            }
        }
        out.push(rec);
    }
    Ok(out)
}

fn fan(poly: &[usize], faces: &mut Vec<[usize; 3]>) {
    for k in 1..poly.len().saturating_sub(1) {
        faces.push([poly[0], poly[k], poly[k + 1]]);
    }
}

pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let (encoding, elements, mut lineno) = parse_header(path, &mut reader)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        let records = match encoding {
            PlyEncoding::Ascii => read_ascii_records(path, &mut reader, el, &mut lineno)?,
            PlyEncoding::BinaryLittleEndian => read_binary_records(path, &mut reader, el, false)?,
            PlyEncoding::BinaryBigEndian => read_binary_records(path, &mut reader, el, true)?,
        };
        match el.name.as_str() {
            "vertex" => {
                let scalar_names: Vec<&str> = el
                    .props
                    .iter()
                    .filter_map(|p| match p {
                        Property::Scalar(n, _) => Some(n.as_str()),
                        Property::List(..) => None,
                    })
                    .collect();
                let col = |c: &str| {
                    scalar_names
                        .iter()
                        .position(|n| *n == c)
                        .ok_or_else(|| Error::format(path, format!("vertex element has no '{c}'")))
                };
                let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
                vertices.extend(records.iter().map(|r| Vec3::new(r.scalars[ix], r.scalars[iy], r.scalars[iz])));
            }
            "face" => {
                let li = el
                    .props
                    .iter()
                    .filter(|p| matches!(p, Property::List(..)))
                    .position(|p| matches!(p, Property::List(n, ..) if n == "vertex_indices" || n == "vertex_index"))
                    .ok_or_else(|| Error::format(path, "face element has no vertex_indices list"))?;
                for r in &records {
                    let poly: Vec<usize> = r.lists[li].iter().map(|v| *v as usize).collect();
                    fan(&poly, &mut faces);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_ply(path: &Path, mesh: &TriangleMesh, encoding: PlyEncoding) -> Result<()> {
    let mut out = Vec::new();
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
        PlyEncoding::BinaryBigEndian => "binary_big_endian",
    };
    let header = format!(
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertex_count(),
        mesh.face_count()
    );
    out.extend_from_slice(header.as_bytes());
    match encoding {
        PlyEncoding::Ascii => {
            for v in mesh.vertices() {
                writeln!(out, "{} {} {}", v.x, v.y, v.z).expect("write to vec");
            }
            for f in mesh.faces() {
                writeln!(out, "3 {} {} {}", f[0], f[1], f[2]).expect("write to vec");
            }
        }
        PlyEncoding::BinaryLittleEndian | PlyEncoding::BinaryBigEndian => {
            let big = encoding == PlyEncoding::BinaryBigEndian;
            for v in mesh.vertices() {
                for c in [v.x, v.y, v.z] {
                    out.extend_from_slice(&if big { c.to_be_bytes() } else { c.to_le_bytes() });
                }
            }
            for f in mesh.faces() {
                out.push(3);
                for &i in f {
                    let i = i as i32;
                    out.extend_from_slice(&if big { i.to_be_bytes() } else { i.to_le_bytes() });
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let n = k + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let c: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, n, format!("bad coordinate '{t}'"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(Error::parse(path, n, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let poly: Vec<usize> = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 = head.parse().map_err(|_| Error::parse(path, n, format!("bad face index '{t}'")))?;
                        // OBJ indices are 1-based; negative ones count back from the end
                        let idx = if i > 0 { i - 1 } else { vertices.len() as i64 + i };
                        if idx < 0 || idx as usize >= vertices.len() {
                            return Err(Error::parse(path, n, format!("face index {i} out of range")));
                        }
                        Ok(idx as usize)
                    })
                    .collect::<Result<_>>()?;
                if poly.len() < 3 {
                    return Err(Error::parse(path, n, "face needs at least three vertices"));
                }
                fan(&poly, &mut faces);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = String::new();
    for v in mesh.vertices() {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in mesh.faces() {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Reads a `.ply` or `.obj` file.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    match extension(path).as_str() {
        "ply" => read_ply(path),
        "obj" => read_obj(path),
        other => Err(Error::format(path, format!("unknown mesh extension '{other}'"))),
    }
}

/// Writes `.ply` (binary little endian) or `.obj` by extension.
pub fn save_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    match extension(path).as_str() {
        "ply" => write_ply(path, mesh, PlyEncoding::BinaryLittleEndian),
        "obj" => write_obj(path, mesh),
        other => Err(Error::format(path, format!("unknown mesh extension '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::geodesic_sphere;

    fn roundtrip(name: &str, write: impl Fn(&Path, &TriangleMesh) -> Result<()>) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        let m = geodesic_sphere(12.5, 3);
        write(&path, &m).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.faces(), m.faces());
    }

    #[test]
    fn ply_roundtrips() {
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian, PlyEncoding::BinaryBigEndian] {
            roundtrip("m.ply", |p, m| write_ply(p, m, enc));
        }
    }

    #[test]
    fn obj_roundtrips() {
        roundtrip("m.obj", write_obj);
    }

    #[test]
    fn ply_with_extra_properties_and_quads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.ply");
        fs::write(
            &path,
            "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 4\nproperty float x\nproperty float y\n\
             property float z\nproperty float nx\nproperty float ny\nproperty float nz\nproperty uchar red\n\
             element face 1\nproperty list uchar int vertex_indices\nend_header\n\
             0 0 0 0 0 1 255\n1 0 0 0 0 1 255\n1 1 0 0 0 1 255\n0 1 0 0 0 1 255\n4 0 1 2 3\n",
        )
        .unwrap();
        let m = read_ply(&path).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
        assert!((m.normals()[0] - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn malformed_files_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.obj");
        fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 zero\n").unwrap();
        match read_obj(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let path = dir.path().join("bad.ply");
        fs::write(&path, "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nbogus\nend_header\n").unwrap();
        match read_ply(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        assert!(load_mesh(&dir.path().join("m.stl")).is_err());
    }
}
