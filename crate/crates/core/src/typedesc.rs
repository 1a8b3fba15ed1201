//! Type trees as data.
//!
//! A type tree converts to a value of the self-describing `TypeDescriptor`
//! type and back. Free sizes and dimensions are written as -1; `any` is
//! written as the named variant with the name `any`. The descriptor has no
//! signedness field, so unsigned integer kinds come back as the signed kind
//! of the same width.

use std::sync::{Arc, OnceLock};

use crate::datamodel::{new_direct, DataHandle};
use crate::ddlparse::parse_type_text;
use crate::error::{Error, Result};
use crate::typesys::{is_identifier, Dim, Field, NumKind, TypeDefs, TypeEnv, TypeNode};

/// Source text of the descriptor type.
pub const TYPE_DESCRIPTOR_TEXT: &str = "typedef TypeDescriptor = union {
    num : struct {
        isFloat : integer*1;
        size : integer*1;
        dim : array of integer*4;
    };
    string : struct {
        isOpaque : integer*1;
        size : integer*4;
    };
    struct : struct {
        isUnion : integer*1;
        fields : array of struct {
            name : string;
            typ : type TypeDescriptor;
            isOptional : integer*1;
        };
    };
    array : struct {
        size : integer*4;
        subtype : type TypeDescriptor;
    };
    named : struct {
        name : string;
    };
};
type TypeDescriptor;
";

/// Name written for `any` in the named variant.
pub const ANY_NAME: &str = "any";

const NUM: usize = 0;
const STRING: usize = 1;
const STRUCT: usize = 2;
const ARRAY: usize = 3;
const NAMED: usize = 4;

/// The parsed descriptor type.
pub fn descriptor_env() -> &'static TypeEnv {
    static ENV: OnceLock<TypeEnv> = OnceLock::new();
    ENV.get_or_init(|| parse_type_text(TYPE_DESCRIPTOR_TEXT).expect("descriptor type parses"))
}

fn dim_code(d: Dim) -> i64 {
    match d {
        Dim::Fixed(n) => n as i64,
        Dim::Free => -1,
    }
}

/// Converts a type tree into a descriptor value. Named references must be
/// defined in `defs`; they are written by name, not expanded.
pub fn type_to_data(t: &TypeNode, defs: &TypeDefs) -> Result<DataHandle> {
    let d = new_direct(descriptor_env())?;
    fill(&d, t, defs)?;
    Ok(d)
}

fn fill(d: &DataHandle, t: &TypeNode, defs: &TypeDefs) -> Result<()> {
    match t {
        TypeNode::Num { kind, dims } => {
            d.set_active_field(NUM)?;
            let v = d.get_field_by_index(NUM)?;
            v.get_field("isFloat")?.assign_int(kind.is_float() as i64)?;
            v.get_field("size")?.assign_int(kind.width() as i64)?;
            let dim = v.get_field("dim")?;
            dim.resize(dims.len())?;
            for (i, x) in dims.iter().enumerate() {
                dim.get_elem(i)?.assign_int(dim_code(*x))?;
            }
        }
        TypeNode::Str { opaque, size } => {
            d.set_active_field(STRING)?;
            let v = d.get_field_by_index(STRING)?;
            v.get_field("isOpaque")?.assign_int(*opaque as i64)?;
            v.get_field("size")?.assign_int(dim_code(*size))?;
        }
        TypeNode::Struct { is_union, fields } => {
            d.set_active_field(STRUCT)?;
            let v = d.get_field_by_index(STRUCT)?;
            v.get_field("isUnion")?.assign_int(*is_union as i64)?;
            let list = v.get_field("fields")?;
            list.resize(fields.len())?;
            for (i, f) in fields.iter().enumerate() {
                let e = list.get_elem(i)?;
                e.get_field("name")?.assign_string(&f.name)?;
                fill(&e.get_field("typ")?, &f.typ, defs)?;
                e.get_field("isOptional")?.assign_int(f.optional as i64)?;
            }
        }
        TypeNode::Array { size, elem } => {
            d.set_active_field(ARRAY)?;
            let v = d.get_field_by_index(ARRAY)?;
            v.get_field("size")?.assign_int(dim_code(*size))?;
            fill(&v.get_field("subtype")?, elem, defs)?;
        }
        TypeNode::NamedRef(name) => {
            if !defs.contains_key(name) {
                return Err(Error::UnknownTypeName(name.clone()));
            }
            d.set_active_field(NAMED)?;
            d.get_field_by_index(NAMED)?.get_field("name")?.assign_string(name)?;
        }
        TypeNode::Any => {
            d.set_active_field(NAMED)?;
            d.get_field_by_index(NAMED)?
                .get_field("name")?
                .assign_string(ANY_NAME)?;
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadDescriptor(msg.into())
}

fn flag(d: &DataHandle, name: &str) -> Result<bool> {
    match d.get_field(name)?.get_int()? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(bad(format!("{name} must be 0 or 1, not {v}"))),
    }
}

fn size_code(v: i64, what: &str) -> Result<Dim> {
    match v {
        -1 => Ok(Dim::Free),
        1..=0xffff_ffff => Ok(Dim::Fixed(v as u32)),
        _ => Err(bad(format!("{what} must be positive or -1, not {v}"))),
    }
}

/// Converts a descriptor value back into a type tree. Named references are
/// not resolved here.
pub fn data_to_type(d: &DataHandle) -> Result<TypeNode> {
    let variant = d.active_field()?;
    let v = d.get_field_by_index(variant)?;
    Ok(match variant {
        NUM => {
            let float = flag(&v, "isFloat")?;
            let size = v.get_field("size")?.get_int()?;
            let width = usize::try_from(size).map_err(|_| bad(format!("bad number size {size}")))?;
            let kind = if float {
                NumKind::float(width)
            } else {
                NumKind::signed_int(width)
            }
            .ok_or_else(|| {
                bad(format!(
                    "no {} kind of size {size}",
                    if float { "real" } else { "integer" }
                ))
            })?;
            let list = v.get_field("dim")?;
            let mut dims = Vec::with_capacity(list.n_elements()?);
            for i in 0..list.n_elements()? {
                dims.push(size_code(list.get_elem(i)?.get_int()?, "matrix dimension")?);
            }
            TypeNode::Num { kind, dims }
        }
        STRING => TypeNode::Str {
            opaque: flag(&v, "isOpaque")?,
            size: size_code(v.get_field("size")?.get_int()?, "string size")?,
        },
        STRUCT => {
            let is_union = flag(&v, "isUnion")?;
            let list = v.get_field("fields")?;
            let n = list.n_elements()?;
            if is_union && n == 0 {
                return Err(bad("a union needs at least one field"));
            }
            let mut fields: Vec<Field> = Vec::with_capacity(n);
            for i in 0..n {
                let e = list.get_elem(i)?;
                let name = String::from_utf8(e.get_field("name")?.get_string()?)
                    .map_err(|_| bad("field name is not UTF-8"))?;
                if !is_identifier(&name) {
                    return Err(bad(format!("`{name}` is not a valid field name")));
                }
                if fields.iter().any(|f| f.name == name) {
                    return Err(bad(format!("duplicate field `{name}`")));
                }
                let optional = flag(&e, "isOptional")?;
                if optional && is_union {
                    return Err(bad(format!("union field `{name}` cannot be optional")));
                }
                fields.push(Field {
                    name,
                    typ: Arc::new(data_to_type(&e.get_field("typ")?)?),
                    optional,
                });
            }
            TypeNode::Struct { is_union, fields }
        }
        ARRAY => TypeNode::Array {
            size: size_code(v.get_field("size")?.get_int()?, "array size")?,
            elem: Arc::new(data_to_type(&v.get_field("subtype")?)?),
        },
        NAMED => {
            let name =
                String::from_utf8(v.get_field("name")?.get_string()?).map_err(|_| bad("type name is not UTF-8"))?;
            if name == ANY_NAME {
                TypeNode::Any
            } else if is_identifier(&name) {
                TypeNode::NamedRef(name)
            } else {
                return Err(bad(format!("`{name}` is not a valid type name")));
            }
        }
        _ => unreachable!(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcodec::print_data;

    fn round(text: &str) -> (TypeNode, TypeNode) {
        let env = parse_type_text(text).unwrap();
        let d = type_to_data(&env.root, &env.defs).unwrap();
        ((*env.root).clone(), data_to_type(&d).unwrap())
    }

    #[test]
    fn examples() {
        let env = parse_type_text("integer*2").unwrap();
        let d = type_to_data(&env.root, &env.defs).unwrap();
        assert_eq!(print_data(&d, false).unwrap(), "num: {isFloat = 0, size = 2, dim = []}");
        let env = parse_type_text("real*4[.,2,.]").unwrap();
        let d = type_to_data(&env.root, &env.defs).unwrap();
        assert_eq!(
            print_data(&d, false).unwrap(),
            "num: {isFloat = 1, size = 4, dim = [-1, 2, -1]}"
        );
        let env = parse_type_text("struct { optional v : real*8; }").unwrap();
        let d = type_to_data(&env.root, &env.defs).unwrap();
        let opt = crate::datamodel::path_get(&d.get_field("struct").unwrap(), "fields[0].isOptional").unwrap();
        assert_eq!(opt.get_int().unwrap(), 1);
    }

    #[test]
    fn round_trips() {
        for t in [
            "integer*8",
            "real*16[3,.]",
            "opaque*7",
            "string",
            "array[4] of array of union { a : integer*1; b : any; }",
            "struct { x : struct {}; optional y : string*3; }",
        ] {
            let (a, b) = round(t);
            assert_eq!(a, b, "{t}");
        }
        let (_, b) = round("unsigned*4");
        assert_eq!(b, TypeNode::scalar(NumKind::I4));
    }

    #[test]
    fn self_description() {
        let env = descriptor_env();
        let body = env.resolve("TypeDescriptor").unwrap();
        let d = type_to_data(&body, &env.defs).unwrap();
        assert_eq!(data_to_type(&d).unwrap(), *body);
        let named = type_to_data(&env.root, &env.defs).unwrap();
        assert_eq!(data_to_type(&named).unwrap(), TypeNode::named("TypeDescriptor"));
    }

    #[test]
    fn bad_descriptors() {
        let d = type_to_data(&TypeNode::scalar(NumKind::I4), &TypeDefs::new()).unwrap();
        d.get_field("num")
            .unwrap()
            .get_field("size")
            .unwrap()
            .assign_int(3)
            .unwrap();
        assert!(matches!(data_to_type(&d), Err(Error::BadDescriptor(_))));
        let d = type_to_data(&TypeNode::matrix(NumKind::I4, vec![Dim::Fixed(2)]), &TypeDefs::new()).unwrap();
        crate::datamodel::path_get(&d.get_field("num").unwrap(), "dim[0]")
            .unwrap()
            .assign_int(0)
            .unwrap();
        assert!(matches!(data_to_type(&d), Err(Error::BadDescriptor(_))));
        assert!(matches!(
            type_to_data(&TypeNode::named("Missing"), &TypeDefs::new()),
            Err(Error::UnknownTypeName(_))
        ));
        let d = new_direct(descriptor_env()).unwrap();
        d.set_active_field(NAMED).unwrap();
        d.get_field("named")
            .unwrap()
            .get_field("name")
            .unwrap()
            .assign_string("X")
            .unwrap();
        assert_eq!(data_to_type(&d).unwrap(), TypeNode::named("X"));
    }
}
