// Parameter containers are generic over the leaf type so the same struct
// holds values (`Tensor`), tape handles (`Var`), gradients or optimizer
// moments, and can be walked in a fixed field order.

macro_rules! param_struct {
    (
        $(#[$meta:meta])*
        pub struct $name:ident { $($(#[$fmeta:meta])* $field:ident),* $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T = crate::Tensor> {
            $($(#[$fmeta])* pub $field: T,)*
        }

        impl<T> $name<T> {
            pub fn map<U>(&self, f: &mut impl FnMut(&str, &T) -> U) -> $name<U> {
                $name { $($field: f(stringify!($field), &self.$field),)* }
            }

            pub fn visit<'a>(&'a self, f: &mut impl FnMut(&str, &'a T)) {
                $(f(stringify!($field), &self.$field);)*
            }

            pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&str, &'a mut T)) {
                $(f(stringify!($field), &mut self.$field);)*
            }
        }
    };
}

pub(crate) use param_struct;
