use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseType {
    File,
    Directory,
    String,
    Int,
    Float,
    Boolean,
    Null,
}

impl BaseType {
    pub fn as_str(self) -> &'static str {
        match self {
            BaseType::File => "File",
            BaseType::Directory => "Directory",
            BaseType::String => "string",
            BaseType::Int => "int",
            BaseType::Float => "float",
            BaseType::Boolean => "boolean",
            BaseType::Null => "null",
        }
    }

    fn parse(s: &str) -> Option<BaseType> {
        Some(match s {
            "File" => BaseType::File,
            "Directory" => BaseType::Directory,
            "string" => BaseType::String,
            "int" | "long" => BaseType::Int,
            "float" | "double" => BaseType::Float,
            "boolean" => BaseType::Boolean,
            "null" => BaseType::Null,
            _ => return None,
        })
    }
}

/// `base`, `base[]`, `base?` or `base[]?`. One array level at most.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataType {
    pub base: BaseType,
    pub array: bool,
    pub optional: bool,
}

impl DataType {
    pub const fn new(base: BaseType) -> Self {
        DataType { base, array: false, optional: false }
    }

    pub fn array_of(self) -> Option<DataType> {
        (!self.array).then_some(DataType { base: self.base, array: true, optional: false })
    }

    pub fn optional(self) -> DataType {
        DataType { optional: true, ..self }
    }

    pub fn required(self) -> DataType {
        DataType { optional: false, ..self }
    }

    /// Element type of an array type (non-optional).
    pub fn item(self) -> DataType {
        DataType { base: self.base, array: false, optional: false }
    }

    pub fn is_file_like(self) -> bool {
        matches!(self.base, BaseType::File | BaseType::Directory)
    }

    /// `T` is assignable to `T` and to `T?`; `null` to any optional type.
    /// No numeric coercion.
    pub fn assignable_to(self, sink: DataType) -> bool {
        if self.base == BaseType::Null && !self.array {
            return sink.optional || sink.base == BaseType::Null;
        }
        self.base == sink.base && self.array == sink.array && (!self.optional || sink.optional)
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base.as_str())?;
        if self.array {
            f.write_str("[]")?;
        }
        if self.optional {
            f.write_str("?")?;
        }
        Ok(())
    }
}

impl FromStr for DataType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (rest, optional) = match s.strip_suffix('?') {
            Some(r) => (r, true),
            None => (s, false),
        };
        let (rest, array) = match rest.strip_suffix("[]") {
            Some(r) => (r, true),
            None => (rest, false),
        };
        if rest.ends_with("[]") || rest.ends_with('?') {
            return Err("only one array level and a trailing `?` are supported".into());
        }
        let base = BaseType::parse(rest).ok_or_else(|| format!("unknown base type `{rest}`"))?;
        Ok(DataType { base, array, optional })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        for s in ["File", "string?", "File[]", "int[]?", "Directory", "boolean"] {
            let t: DataType = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert_eq!("long".parse::<DataType>().unwrap().to_string(), "int");
        assert!("File[][]".parse::<DataType>().is_err());
        assert!("File?[]".parse::<DataType>().is_err());
        assert!("record".parse::<DataType>().is_err());
        assert!("".parse::<DataType>().is_err());
    }

    #[test]
    fn assignability() {
        let t = |s: &str| s.parse::<DataType>().unwrap();
        assert!(t("File").assignable_to(t("File")));
        assert!(t("File").assignable_to(t("File?")));
        assert!(!t("File?").assignable_to(t("File")));
        assert!(!t("int").assignable_to(t("float")));
        assert!(!t("File[]").assignable_to(t("File")));
        assert!(t("null").assignable_to(t("string?")));
        assert!(!t("null").assignable_to(t("string")));
    }
}
