//! The binary file format.
//!
//! A file is a text header followed by the data. Scalars use their natural
//! representation in the file's byte order; each free matrix dimension,
//! free string length and free array length is a 4-byte count in front of
//! the data; matrix cells run first-index-fastest; an optional field is
//! preceded by a tag byte (0 = absent); a union by a 2-byte 0-based variant
//! index; an `any` value by its length-prefixed type text. There is no
//! alignment or padding.

mod decode;
mod encode;
mod header;
mod source;
pub(crate) mod wire;
mod writer;

use std::io::{BufReader, Write};
use std::path::Path;

pub use decode::{decode_value, decode_value_at};
pub use encode::{encode_to_vec, encode_value};
pub use header::{
    header_bytes, scan_header, scan_header_bytes, write_header, ByteOrder, FileHeader, Mode, MAGIC, VERSION,
};
pub use source::{ByteSource, CountingSource, FileSource, SourceReader};
pub use wire::{MAX_DECODE_DEPTH, MAX_EMPTY_ELEMENTS};
pub use writer::{DataFile, Region, StreamWriter};

use crate::datamodel::DataHandle;
use crate::error::{Error, Result};
use crate::textcodec::{declared_type, print_data, read_data};
use crate::typesys::TypeEnv;

/// The type unit describing `d` as a file root.
pub fn root_env(d: &DataHandle) -> Result<TypeEnv> {
    Ok(TypeEnv {
        defs: d.imp()?.declared_defs(),
        root: declared_type(d)?,
    })
}

/// Writes a complete file (header and data) in the given mode.
pub fn write_file(d: &DataHandle, mode: Mode, comments: &[String], out: &mut dyn Write) -> Result<()> {
    let header = FileHeader::new(root_env(d)?, mode).with_comments(comments.to_vec());
    match mode {
        Mode::Binary(order) => {
            let mut data = Vec::new();
            encode_value(d, order, &mut data)?;
            write_header(&header, out)?;
            out.write_all(&data)?;
        }
        Mode::Text => {
            let text = print_data(d, true)?;
            write_header(&header, out)?;
            out.write_all(text.as_bytes())?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn file_bytes(d: &DataHandle, mode: Mode, comments: &[String]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_file(d, mode, comments, &mut out)?;
    Ok(out)
}

/// Reads a whole file of either mode from a byte source.
pub fn read_source(src: &dyn ByteSource) -> Result<(FileHeader, DataHandle)> {
    let header = scan_header(&mut BufReader::new(SourceReader::new(src, 0)))?;
    let value = match header.mode {
        Mode::Binary(order) => {
            let (v, end) = decode_value_at(&header.env, order, src, header.data_start)?;
            if end != src.len() {
                return Err(Error::TrailingBytes {
                    count: src.len() - end,
                    offset: end,
                });
            }
            v
        }
        Mode::Text => {
            let n = src.len() - header.data_start;
            let mut bytes = vec![0; n as usize];
            src.read_at(header.data_start, &mut bytes)?;
            let text = String::from_utf8(bytes).map_err(|e| Error::TextSyntax {
                message: format!("data is not UTF-8 (byte {})", e.utf8_error().valid_up_to()),
                pos: Default::default(),
            })?;
            read_data(&header.env, &text)?
        }
    };
    Ok((header, value))
}

pub fn read_bytes(bytes: &[u8]) -> Result<(FileHeader, DataHandle)> {
    read_source(&bytes)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<(FileHeader, DataHandle)> {
    read_source(&FileSource::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{deep_eq, new_direct, MatrixShape, MatrixValue};
    use crate::ddlparse::parse_type_text;
    use crate::textcodec::read_data;
    use crate::typesys::NumKind;
    use std::io::Cursor;

    fn value(ty: &str, text: &str) -> DataHandle {
        read_data(&parse_type_text(ty).unwrap(), text).unwrap()
    }

    fn be(ty: &str, text: &str) -> Vec<u8> {
        encode_to_vec(&value(ty, text), ByteOrder::Big).unwrap()
    }

    #[test]
    fn rule_bytes() {
        assert_eq!(be("integer*2", "12"), [0x00, 0x0C]);
        assert_eq!(
            encode_to_vec(&value("integer*2", "12"), ByteOrder::Little).unwrap(),
            [0x0C, 0x00]
        );
        assert_eq!(be("struct { optional v : real*8; }", "{}"), [0x00]);
        assert_eq!(be("struct { optional v : integer*1; }", "{v = 5}"), [0x01, 0x05]);
        assert_eq!(be("array of integer*1", "[7, 8, 9]"), [0, 0, 0, 3, 7, 8, 9]);
        assert_eq!(be("array[3] of integer*1", "[7, 8, 9]"), [7, 8, 9]);
        assert_eq!(be("string", "\"ab\""), [0, 0, 0, 2, b'a', b'b']);
        assert_eq!(be("string*3", "\"ab\""), [b'a', b'b', 0]);
        assert_eq!(be("union { a : integer*1; b : integer*1; }", "b: 4"), [0, 1, 4]);
        assert_eq!(be("integer*1[.,2]", "2 [1, 2, 3, 4]"), [0, 0, 0, 2, 1, 2, 3, 4]);
        assert_eq!(
            be("any", "(integer*1) 9"),
            [0, 0, 0, 10, b'i', b'n', b't', b'e', b'g', b'e', b'r', b'*', b'1', b';', 9]
        );
    }

    #[test]
    fn matrix_order() {
        let d = new_direct(&parse_type_text("integer*1[2,3]").unwrap()).unwrap();
        let mut shape = MatrixShape::from_counts(&[2, 3]);
        shape.first_index_fastest = false;
        let m = MatrixValue::from_ints(NumKind::I1, shape, &[0, 1, 2, 10, 11, 12]).unwrap();
        d.assign_matrix(&m).unwrap();
        assert_eq!(encode_to_vec(&d, ByteOrder::Big).unwrap(), [0, 10, 1, 11, 2, 12]);
    }

    #[test]
    fn decode_errors() {
        let env = parse_type_text("union { a : integer; b : integer; c : integer; }").unwrap();
        assert!(matches!(
            decode_value(&env, ByteOrder::Big, &[0, 5, 0, 0, 0, 0]),
            Err(Error::BadUnionSelector {
                selector: 5,
                offset: 0,
                ..
            })
        ));
        let env = parse_type_text("array of integer*4").unwrap();
        assert!(matches!(
            decode_value(&env, ByteOrder::Big, &[0xff, 0xff, 0xff, 0xff]),
            Err(Error::NegativeCount { .. })
        ));
        assert!(matches!(
            decode_value(&env, ByteOrder::Big, &[0x7f, 0xff, 0xff, 0xff, 0, 0, 0, 0]),
            Err(Error::CountOverflow { .. })
        ));
        assert!(matches!(
            decode_value(&env, ByteOrder::Big, &[0, 0, 0, 1, 0, 0]),
            Err(Error::CountOverflow { count: 1, offset: 0 })
        ));
        let fixed = parse_type_text("integer*4").unwrap();
        assert!(matches!(
            decode_value(&fixed, ByteOrder::Big, &[0, 0]),
            Err(Error::Truncated { offset: 2 })
        ));
        assert!(matches!(
            decode_value(&env, ByteOrder::Big, &[0, 0, 0, 0, 1]),
            Err(Error::TrailingBytes { count: 1, offset: 4 })
        ));
        let env = parse_type_text("any").unwrap();
        assert!(matches!(
            decode_value(&env, ByteOrder::Big, &[0, 0, 0, 3, b'f', b'o', b'o']),
            Err(Error::AnyTypeParse { offset: 0, .. })
        ));
        let env = parse_type_text("typedef L = union { end : integer*1; more : type L; }; type L;").unwrap();
        let mut deep = [0u8, 1].repeat(MAX_DECODE_DEPTH + 10);
        deep.extend([0, 0, 0]);
        assert!(matches!(
            decode_value(&env, ByteOrder::Big, &deep),
            Err(Error::TooDeep { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let d = value(
            "struct { s : string; m : real*4[.,3]; o : array of struct { optional x : integer*8; }; a : any; }",
            "{s = \"hi\", m = 1 [1, 2, 3], o = [{}, {x = -5}], a = (array of string) [\"q\"]}",
        );
        for mode in [
            Mode::Binary(ByteOrder::Big),
            Mode::Binary(ByteOrder::Little),
            Mode::Text,
        ] {
            let bytes = file_bytes(&d, mode, &["note".into()]).unwrap();
            let (h, back) = read_bytes(&bytes).unwrap();
            assert_eq!(h.mode, mode);
            assert!(deep_eq(&d, &back).unwrap());
        }
    }

    #[test]
    fn streaming_matches_one_shot() {
        let env = parse_type_text(
            "struct { name : string; steps : array of struct { t : integer*4; optional v : real*8[.]; }; tail : union { a : integer*1; b : string; }; }",
        )
        .unwrap();
        let header = FileHeader::new(env.clone(), Mode::Binary(ByteOrder::Big));
        let mut file = DataFile::new(Cursor::new(Vec::new()), header).unwrap();
        let root = file.root();
        root.get_field("name").unwrap().assign_string("run").unwrap();
        let steps = root.get_field("steps").unwrap();
        let reference = new_direct(&env).unwrap();
        reference.get_field("name").unwrap().assign_string("run").unwrap();
        let ref_steps = reference.get_field("steps").unwrap();
        assert!(file.commit(&crate::datamodel::CursorPos::root()).is_ok());
        for i in 0..5usize {
            steps.resize(i + 1).unwrap();
            ref_steps.resize(i + 1).unwrap();
            for s in [&steps, &ref_steps] {
                let e = s.get_elem(i).unwrap();
                e.get_field("t").unwrap().assign_int(i as i64).unwrap();
                if i % 2 == 1 {
                    e.set_field_present("v").unwrap();
                }
            }
            file.commit(&crate::datamodel::CursorPos(vec![0, 1, i + 1])).unwrap();
            assert!(root.node_count() < 12, "{}", root.node_count());
        }
        assert!(matches!(steps.get_elem(0), Err(Error::WriteOnlySession)));
        assert!(matches!(
            file.commit(&crate::datamodel::CursorPos(vec![0, 0])),
            Err(Error::CursorOrderViolation)
        ));
        root.get_field("tail").unwrap().set_active_field(1).unwrap();
        reference.get_field("tail").unwrap().set_active_field(1).unwrap();
        let streamed = file.close().unwrap().into_inner();
        let one_shot = file_bytes(&reference, Mode::Binary(ByteOrder::Big), &[]).unwrap();
        assert_eq!(streamed, one_shot);
    }

    #[test]
    fn incomplete_prefix() {
        let env = parse_type_text("struct { a : any; b : integer; }").unwrap();
        let header = FileHeader::new(env, Mode::Binary(ByteOrder::Little));
        let mut file = DataFile::new(Cursor::new(Vec::new()), header).unwrap();
        let before = file.writer().position();
        assert!(matches!(
            file.commit(&crate::datamodel::CursorPos(vec![0, 1])),
            Err(Error::IncompletePrefix(_))
        ));
        assert_eq!(file.writer().position(), before);
        file.root()
            .get_field("a")
            .unwrap()
            .actualize_type(&parse_type_text("integer*1").unwrap())
            .unwrap();
        file.commit(&crate::datamodel::CursorPos(vec![0, 1])).unwrap();
        let bytes = file.close().unwrap().into_inner();
        let (_, v) = read_bytes(&bytes).unwrap();
        assert_eq!(v.get_field("a").unwrap().get_int().unwrap(), 0);
    }
}
